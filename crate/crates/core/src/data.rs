//! Trajectory records, the six treatment sequences and CSV ingestion.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stage-1 or Stage-2 treatment option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Plus,
    Minus,
}

impl Arm {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(Arm::Plus),
            -1 => Some(Arm::Minus),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            Arm::Plus => 1,
            Arm::Minus => -1,
        }
    }

    pub fn sign(self) -> f64 {
        self.code() as f64
    }
}

/// One of the four potential compliances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    D1,
    D2,
    D3,
    D4,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::D1, Slot::D2, Slot::D3, Slot::D4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Slot {
        Slot::ALL[i]
    }

    /// Stage-1 compliance a Stage-2 slot is regressed on (D1 for D3, D2 for D4).
    pub fn parent(self) -> Option<Slot> {
        match self {
            Slot::D3 => Some(Slot::D1),
            Slot::D4 => Some(Slot::D2),
            _ => None,
        }
    }

    pub fn is_stage2(self) -> bool {
        matches!(self, Slot::D3 | Slot::D4)
    }

    /// Stage-1 compliance slot under a Stage-1 arm.
    pub fn stage1(a1: Arm) -> Slot {
        match a1 {
            Arm::Plus => Slot::D1,
            Arm::Minus => Slot::D2,
        }
    }

    /// Stage-2 compliance slot reached after a Stage-1 arm.
    pub fn stage2(a1: Arm) -> Slot {
        match a1 {
            Arm::Plus => Slot::D3,
            Arm::Minus => Slot::D4,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotRole {
    Observed,
    Latent,
    /// Undefined for the sequence; never enters a likelihood.
    Inert,
}

/// Treatment sequence k = 1..6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sequence(u8);

impl Sequence {
    pub const ALL: [Sequence; 6] = [Sequence(1), Sequence(2), Sequence(3), Sequence(4), Sequence(5), Sequence(6)];

    pub fn new(k: u8) -> Result<Self> {
        if (1..=6).contains(&k) {
            Ok(Sequence(k))
        } else {
            Err(Error::invalid(format!("sequence {k} outside 1..6")))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// Zero-based position for per-sequence arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn stage1_arm(self) -> Arm {
        if self.0 <= 3 {
            Arm::Plus
        } else {
            Arm::Minus
        }
    }

    pub fn is_responder(self) -> bool {
        self.0 == 1 || self.0 == 4
    }

    pub fn roles(self) -> [SlotRole; 4] {
        use SlotRole::*;
        match self.0 {
            1 => [Observed, Latent, Inert, Inert],
            2 => [Observed, Latent, Observed, Inert],
            3 => [Observed, Latent, Latent, Inert],
            4 => [Latent, Observed, Inert, Inert],
            5 => [Latent, Observed, Inert, Observed],
            6 => [Latent, Observed, Inert, Latent],
            _ => unreachable!("sequence invariant"),
        }
    }

    pub fn role(self, slot: Slot) -> SlotRole {
        self.roles()[slot.index()]
    }

    fn slots_with(self, role: SlotRole) -> Vec<Slot> {
        Slot::ALL.into_iter().filter(|&s| self.role(s) == role).collect()
    }

    pub fn observed_slots(self) -> Vec<Slot> {
        self.slots_with(SlotRole::Observed)
    }

    pub fn latent_slots(self) -> Vec<Slot> {
        self.slots_with(SlotRole::Latent)
    }

    pub fn inert_slots(self) -> Vec<Slot> {
        self.slots_with(SlotRole::Inert)
    }

    /// Observed and latent slots in increasing order.
    pub fn active_slots(self) -> Vec<Slot> {
        Slot::ALL.into_iter().filter(|&s| self.role(s) != SlotRole::Inert).collect()
    }

    /// Compliance scores entering this sequence's outcome model.
    pub fn outcome_slots(self) -> &'static [Slot] {
        match self.0 {
            1 | 4 => &[Slot::D1, Slot::D2],
            2 | 3 => &[Slot::D1, Slot::D2, Slot::D3],
            _ => &[Slot::D1, Slot::D2, Slot::D4],
        }
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Latent set of a sequence given by number; errors outside 1..6.
pub fn latent_slots(k: u8) -> Result<Vec<Slot>> {
    Ok(Sequence::new(k)?.latent_slots())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub x0: Vec<f64>,
    pub a1: Arm,
    pub d_obs1: f64,
    pub responder: bool,
    /// Present exactly for nonresponders (empty when there are no intermediate covariates).
    pub x1: Option<Vec<f64>>,
    pub a2: Option<Arm>,
    pub d_obs2: Option<f64>,
    pub y: f64,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Validation(format!("subject {}: {msg}", self.id)));
        if !(0.0..=1.0).contains(&self.d_obs1) {
            return fail("d_obs1 outside [0, 1]");
        }
        if let Some(d) = self.d_obs2 {
            if !(0.0..=1.0).contains(&d) {
                return fail("d_obs2 outside [0, 1]");
            }
        }
        if !self.y.is_finite() || self.x0.iter().any(|v| !v.is_finite()) {
            return fail("non-finite outcome or baseline covariate");
        }
        if self.responder {
            if self.a2.is_some() || self.d_obs2.is_some() || self.x1.is_some() {
                return fail("responder carries Stage-2 fields");
            }
            return Ok(());
        }
        match self.a2 {
            None => return fail("nonresponder without a2"),
            Some(Arm::Minus) if self.d_obs2.is_some() => return fail("a2 = -1 with a recorded Stage-2 compliance"),
            Some(Arm::Plus) if self.d_obs2.is_none() => return fail("a2 = +1 without a Stage-2 compliance"),
            _ => {}
        }
        match &self.x1 {
            None => fail("nonresponder without intermediate covariates"),
            Some(x) if x.iter().any(|v| !v.is_finite()) => fail("non-finite intermediate covariate"),
            _ => Ok(()),
        }
    }

    pub fn sequence(&self) -> Result<Sequence> {
        classify_sequence(self)
    }

    /// Observed value of a compliance slot, if the subject's sequence records it.
    pub fn observed(&self, slot: Slot) -> Option<f64> {
        if slot == Slot::stage1(self.a1) {
            return Some(self.d_obs1);
        }
        if slot == Slot::stage2(self.a1) {
            return self.d_obs2;
        }
        None
    }

    pub fn x1_or_empty(&self) -> &[f64] {
        self.x1.as_deref().unwrap_or(&[])
    }
}

/// Sequence of a record; validation errors name the violated invariant.
pub fn classify_sequence(t: &Trajectory) -> Result<Sequence> {
    t.validate()?;
    let base = match t.a1 {
        Arm::Plus => 1,
        Arm::Minus => 4,
    };
    let offset = match (t.responder, t.a2) {
        (true, _) => 0,
        (false, Some(Arm::Plus)) => 1,
        (false, _) => 2,
    };
    Ok(Sequence(base + offset))
}

/// Potential compliances of one subject with their roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceState {
    pub d: [f64; 4],
    pub sequence: Sequence,
}

impl ComplianceState {
    /// Observed slots from the record, latent slots from `fill`, inert slots at 0.
    pub fn new(t: &Trajectory, sequence: Sequence, fill: [f64; 4]) -> Self {
        let mut d = [0.0; 4];
        for s in Slot::ALL {
            d[s.index()] = match sequence.role(s) {
                SlotRole::Observed => t.observed(s).expect("observed slot recorded"),
                SlotRole::Latent => fill[s.index()].clamp(0.0, 1.0),
                SlotRole::Inert => 0.0,
            };
        }
        Self { d, sequence }
    }

    pub fn observed_mask(&self) -> [bool; 4] {
        self.sequence.roles().map(|r| r == SlotRole::Observed)
    }

    pub fn get(&self, slot: Slot) -> f64 {
        self.d[slot.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub m1: usize,
    pub m2: usize,
    sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, m1: usize, m2: usize) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        let mut sequences = Vec::with_capacity(trajectories.len());
        for (row, t) in trajectories.iter().enumerate() {
            let wrap = |e: Error| Error::Data { row: row + 1, msg: e.to_string() };
            if t.x0.len() != m1 {
                return Err(Error::Data { row: row + 1, msg: format!("expected {m1} baseline covariates") });
            }
            if let Some(x1) = &t.x1 {
                if x1.len() != m2 {
                    return Err(Error::Data { row: row + 1, msg: format!("expected {m2} intermediate covariates") });
                }
            }
            sequences.push(classify_sequence(t).map_err(wrap)?);
        }
        Ok(Self { trajectories, m1, m2, sequences })
    }

    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    pub fn sequence(&self, i: usize) -> Sequence {
        self.sequences[i]
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn sequence_counts(&self) -> [usize; 6] {
        let mut c = [0; 6];
        for s in &self.sequences {
            c[s.index()] += 1;
        }
        c
    }

    /// Observed values of a compliance slot across subjects.
    pub fn observed_values(&self, slot: Slot) -> Vec<f64> {
        self.trajectories.iter().filter_map(|t| t.observed(slot)).collect()
    }

    /// Column-wise mean of baseline covariates.
    pub fn mean_x0(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.m1).map(|c| self.trajectories.iter().map(|t| t.x0[c]).sum::<f64>() / n).collect()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string()];
        h.extend((1..=self.m1).map(|i| format!("x0_{i}")));
        h.extend(["a1", "d_obs1", "s"].map(String::from));
        h.extend((1..=self.m2).map(|i| format!("x1_{i}")));
        h.extend(["a2", "d_obs2", "y"].map(String::from));
        h
    }

    /// Writes the CSV schema, preceded by `# ` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for t in &self.trajectories {
            let mut rec = vec![t.id.clone()];
            rec.extend(t.x0.iter().map(|v| v.to_string()));
            rec.push(t.a1.code().to_string());
            rec.push(t.d_obs1.to_string());
            rec.push(if t.responder { "1" } else { "0" }.to_string());
            match &t.x1 {
                Some(x) => rec.extend(x.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), self.m2)),
            }
            rec.push(opt(t.a2.map(|a| a.code().to_string())));
            rec.push(opt(t.d_obs2.map(|d| d.to_string())));
            rec.push(t.y.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        ingest_csv(r)
    }
}

/// Parses and validates a dataset. Lines starting with `#` are skipped;
/// `m1` and `m2` come from the header.
pub fn ingest_csv<R: Read>(r: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let header = reader.headers()?.clone();
    let col: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let need = |name: &str| {
        col.get(name).copied().ok_or_else(|| Error::Data { row: 0, msg: format!("missing column `{name}`") })
    };
    let numbered = |prefix: &str| -> Vec<usize> {
        (1..).map_while(|i| col.get(format!("{prefix}{i}").as_str()).copied()).collect()
    };
    let c_id = need("id")?;
    let c_a1 = need("a1")?;
    let c_d1 = need("d_obs1")?;
    let c_s = need("s")?;
    let c_a2 = need("a2")?;
    let c_d2 = need("d_obs2")?;
    let c_y = need("y")?;
    let c_x0 = numbered("x0_");
    let c_x1 = numbered("x1_");
    let (m1, m2) = (c_x0.len(), c_x1.len());

    let mut trajectories = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let err = |msg: String| Error::Data { row, msg };
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let real = |c: usize, name: &str| -> Result<f64> {
            let v: f64 = cell(c).parse().map_err(|_| err(format!("`{name}` is not a number: {:?}", cell(c))))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("`{name}` is not finite")))
            }
        };
        let opt_real = |c: usize, name: &str| -> Result<Option<f64>> {
            if cell(c).is_empty() {
                Ok(None)
            } else {
                real(c, name).map(Some)
            }
        };
        let arm = |c: usize, name: &str| -> Result<Option<Arm>> {
            if cell(c).is_empty() {
                return Ok(None);
            }
            let code: i64 = cell(c).parse().map_err(|_| err(format!("`{name}` must be -1 or 1")))?;
            Arm::from_code(code).map(Some).ok_or_else(|| err(format!("`{name}` must be -1 or 1, got {code}")))
        };

        let x0 =
            c_x0.iter().enumerate().map(|(i, &c)| real(c, &format!("x0_{}", i + 1))).collect::<Result<Vec<_>>>()?;
        let a1 = arm(c_a1, "a1")?.ok_or_else(|| err("`a1` is required".into()))?;
        let d_obs1 = real(c_d1, "d_obs1")?;
        if !(0.0..=1.0).contains(&d_obs1) {
            return Err(err(format!("d_obs1 = {d_obs1} outside [0, 1]")));
        }
        let responder = match cell(c_s) {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("`s` must be 0 or 1, got {other:?}"))),
        };
        let x1_cells: Vec<Option<f64>> =
            c_x1.iter().enumerate().map(|(i, &c)| opt_real(c, &format!("x1_{}", i + 1))).collect::<Result<_>>()?;
        let a2 = arm(c_a2, "a2")?;
        let d_obs2 = opt_real(c_d2, "d_obs2")?;
        if let Some(d) = d_obs2 {
            if !(0.0..=1.0).contains(&d) {
                return Err(err(format!("d_obs2 = {d} outside [0, 1]")));
            }
        }
        let x1 = if responder {
            if x1_cells.iter().any(Option::is_some) {
                return Err(err("responder with intermediate covariates".into()));
            }
            None
        } else {
            Some(
                x1_cells
                    .into_iter()
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| err("nonresponder with missing intermediate covariate".into()))?,
            )
        };
        let t =
            Trajectory { id: cell(c_id).to_string(), x0, a1, d_obs1, responder, x1, a2, d_obs2, y: real(c_y, "y")? };
        t.validate().map_err(|e| err(e.to_string()))?;
        trajectories.push(t);
    }
    Dataset::new(trajectories, m1, m2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(a1: Arm, responder: bool, a2: Option<Arm>) -> Trajectory {
        Trajectory {
            id: "s".into(),
            x0: vec![0.1],
            a1,
            d_obs1: 0.6,
            responder,
            x1: (!responder).then(Vec::new),
            a2,
            d_obs2: (a2 == Some(Arm::Plus)).then_some(0.4),
            y: 1.2,
        }
    }

    #[test]
    fn classification_follows_the_sequence_table() {
        assert_eq!(classify_sequence(&traj(Arm::Plus, true, None)).unwrap().number(), 1);
        assert_eq!(classify_sequence(&traj(Arm::Minus, false, Some(Arm::Plus))).unwrap().number(), 5);
        assert_eq!(classify_sequence(&traj(Arm::Plus, false, Some(Arm::Minus))).unwrap().number(), 3);
        assert_eq!(classify_sequence(&traj(Arm::Plus, false, Some(Arm::Plus))).unwrap().number(), 2);
        assert_eq!(classify_sequence(&traj(Arm::Minus, true, None)).unwrap().number(), 4);
        assert_eq!(classify_sequence(&traj(Arm::Minus, false, Some(Arm::Minus))).unwrap().number(), 6);
    }

    #[test]
    fn inconsistent_records_are_rejected() {
        let mut t = traj(Arm::Plus, true, None);
        t.a2 = Some(Arm::Plus);
        let msg = classify_sequence(&t).unwrap_err().to_string();
        assert!(msg.contains("responder carries Stage-2 fields"), "{msg}");
        let mut t = traj(Arm::Plus, false, Some(Arm::Minus));
        t.d_obs2 = Some(0.3);
        assert!(classify_sequence(&t).is_err());
    }

    #[test]
    fn latent_sets() {
        assert_eq!(latent_slots(2).unwrap(), vec![Slot::D2]);
        assert_eq!(latent_slots(6).unwrap(), vec![Slot::D1, Slot::D4]);
        assert_eq!(latent_slots(1).unwrap(), vec![Slot::D2]);
        assert_eq!(Sequence::new(1).unwrap().inert_slots(), vec![Slot::D3, Slot::D4]);
        assert!(latent_slots(0).is_err());
        assert!(latent_slots(7).is_err());
    }

    #[test]
    fn roles_partition_the_slots() {
        for k in Sequence::ALL {
            let mut all = [k.observed_slots(), k.latent_slots(), k.inert_slots()].concat();
            all.sort();
            assert_eq!(all, Slot::ALL.to_vec());
            for &s in k.outcome_slots() {
                assert_ne!(k.role(s), SlotRole::Inert, "sequence {k} slot {s}");
            }
        }
    }

    #[test]
    fn minimal_file() {
        let csv = "id,x0_1,a1,d_obs1,s,a2,d_obs2,y\nr1,0.0,1,0.6,1,,,1.2\n";
        let ds = ingest_csv(csv.as_bytes()).unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!((ds.m1, ds.m2), (1, 0));
        assert_eq!(ds.sequence(0).number(), 1);
    }

    #[test]
    fn range_error_names_the_row() {
        let csv = "# comment\nid,x0_1,a1,d_obs1,s,a2,d_obs2,y\nr1,0,1,0.6,1,,,1\nr2,0,1,1.4,1,,,1\n";
        match ingest_csv(csv.as_bytes()).unwrap_err() {
            Error::Data { row, msg } => {
                assert_eq!(row, 2);
                assert!(msg.contains("d_obs1"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_column_and_stage2_on_responder() {
        let csv = "id,x0_1,a1,d_obs1,s,a2,y\nr1,0,1,0.6,1,,1\n";
        assert!(ingest_csv(csv.as_bytes()).unwrap_err().to_string().contains("d_obs2"));
        let csv = "id,x0_1,a1,d_obs1,s,a2,d_obs2,y\nr1,0,1,0.6,1,1,0.5,1\n";
        assert!(matches!(ingest_csv(csv.as_bytes()), Err(Error::Data { row: 1, .. })));
    }

    fn arb_trajectory(m1: usize, m2: usize) -> impl Strategy<Value = Trajectory> {
        (
            proptest::collection::vec(-5.0f64..5.0, m1),
            proptest::collection::vec(-5.0f64..5.0, m2),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            0.0f64..=1.0,
            0.0f64..=1.0,
            -10.0f64..10.0,
        )
            .prop_map(|(x0, x1, plus, responder, a2_plus, d1, d2, y)| {
                let a2 = (!responder).then_some(if a2_plus { Arm::Plus } else { Arm::Minus });
                Trajectory {
                    id: "p".into(),
                    x0,
                    a1: if plus { Arm::Plus } else { Arm::Minus },
                    d_obs1: d1,
                    responder,
                    x1: (!responder).then_some(x1),
                    a2,
                    d_obs2: (a2 == Some(Arm::Plus)).then_some(d2),
                    y,
                }
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(ts in proptest::collection::vec(arb_trajectory(2, 1), 1..30)) {
            let ds = Dataset::new(ts, 2, 1).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf, &["seed=1".to_string()]).unwrap();
            let back = ingest_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn classification_is_total(t in arb_trajectory(1, 0)) {
            let k = classify_sequence(&t).unwrap();
            prop_assert_eq!(k.stage1_arm(), t.a1);
            prop_assert_eq!(k.is_responder(), t.responder);
            for s in k.observed_slots() {
                prop_assert!(t.observed(s).is_some());
            }
        }
    }
}
