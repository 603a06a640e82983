//! Game records, the Latin-square session design, and synthetic experiments.
//!
//! A dataset file is a CSV with the header `session,a_id,b_id,game,outcome`.
//! Subject ids are scoped to their session; each subject also receives a
//! global index (sessions in order of first appearance, ids ascending within
//! a session) that random-effects parameter vectors are indexed by.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::game::{PayoffTable, Role};
use crate::models::ModelSpec;
use crate::resampling::simulate_replicate;

/// One observed game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameRecord {
    pub session: u32,
    pub a_id: u32,
    pub b_id: u32,
    /// Game number, 1-based.
    pub game: u32,
    /// Terminal node reached, `1..=5`.
    pub outcome: u8,
}

/// A record resolved against the subject registry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatchContext {
    /// Position of the session in [`Dataset::sessions`].
    pub session: usize,
    /// Global index of the Player A subject.
    pub a: usize,
    /// Global index of the Player B subject.
    pub b: usize,
    pub t: u32,
}

/// Session-scoped subject identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubjectId {
    pub session: u32,
    pub role: Role,
    pub id: u32,
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.session, self.role, self.id)
    }
}

/// Outcome counts per game number.
#[derive(Clone, Debug, PartialEq)]
pub struct GameCounts {
    pub rows: Vec<(u32, [u32; 5])>,
}

/// A validated collection of game records.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<GameRecord>,
    sessions: Vec<u32>,
    a_subjects: Vec<SubjectId>,
    b_subjects: Vec<SubjectId>,
    contexts: Vec<MatchContext>,
}

impl Dataset {
    /// Validates records and builds the subject registry.
    pub fn new(records: Vec<GameRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(domain("no records"));
        }
        let mut seen = HashSet::new();
        for r in &records {
            check_record(r)?;
            if !seen.insert((r.session, r.a_id, r.b_id)) {
                return Err(domain(format!(
                    "duplicate pair: session {} A {} B {}",
                    r.session, r.a_id, r.b_id
                )));
            }
        }
        Ok(Self::build(records))
    }

    fn build(records: Vec<GameRecord>) -> Self {
        let mut sessions = Vec::new();
        let mut a_ids: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        let mut b_ids: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for r in &records {
            if !sessions.contains(&r.session) {
                sessions.push(r.session);
            }
            a_ids.entry(r.session).or_default().push(r.a_id);
            b_ids.entry(r.session).or_default().push(r.b_id);
        }
        let registry = |ids: &mut BTreeMap<u32, Vec<u32>>, role| {
            let mut out = Vec::new();
            for &s in &sessions {
                let v = ids.get_mut(&s).expect("session has records");
                v.sort_unstable();
                v.dedup();
                out.extend(v.iter().map(|&id| SubjectId {
                    session: s,
                    role,
                    id,
                }));
            }
            out
        };
        let a_subjects = registry(&mut a_ids, Role::A);
        let b_subjects = registry(&mut b_ids, Role::B);
        let a_index: HashMap<(u32, u32), usize> = a_subjects
            .iter()
            .enumerate()
            .map(|(k, s)| ((s.session, s.id), k))
            .collect();
        let b_index: HashMap<(u32, u32), usize> = b_subjects
            .iter()
            .enumerate()
            .map(|(k, s)| ((s.session, s.id), k))
            .collect();
        let contexts = records
            .iter()
            .map(|r| MatchContext {
                session: sessions.iter().position(|&s| s == r.session).unwrap(),
                a: a_index[&(r.session, r.a_id)],
                b: b_index[&(r.session, r.b_id)],
                t: r.game,
            })
            .collect();
        Dataset {
            records,
            sessions,
            a_subjects,
            b_subjects,
            contexts,
        }
    }

    pub fn records(&self) -> &[GameRecord] {
        &self.records
    }

    pub fn contexts(&self) -> &[MatchContext] {
        &self.contexts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Session ids in order of first appearance.
    pub fn sessions(&self) -> &[u32] {
        &self.sessions
    }

    pub fn subjects(&self, role: Role) -> &[SubjectId] {
        match role {
            Role::A => &self.a_subjects,
            Role::B => &self.b_subjects,
        }
    }

    /// Global subject indices of `role`, grouped by session position.
    pub fn subjects_by_session(&self, role: Role) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sessions.len()];
        for (k, s) in self.subjects(role).iter().enumerate() {
            let pos = self.sessions.iter().position(|&x| x == s.session).unwrap();
            out[pos].push(k);
        }
        out
    }

    /// Record indices involving each subject of `role`.
    pub fn records_by_subject(&self, role: Role) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.subjects(role).len()];
        for (i, c) in self.contexts.iter().enumerate() {
            let k = match role {
                Role::A => c.a,
                Role::B => c.b,
            };
            out[k].push(i);
        }
        out
    }

    pub fn outcomes(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    /// Outcome counts per game number, ascending in game number.
    pub fn counts_by_game(&self) -> GameCounts {
        let mut map: BTreeMap<u32, [u32; 5]> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.game).or_default()[r.outcome as usize - 1] += 1;
        }
        GameCounts {
            rows: map.into_iter().collect(),
        }
    }

    /// Same design and registry with the outcomes replaced.
    pub fn with_outcomes(&self, outcomes: &[u8]) -> Result<Self> {
        if outcomes.len() != self.records.len() {
            return Err(domain("outcome vector length does not match the dataset"));
        }
        if let Some(&y) = outcomes.iter().find(|y| !(1..=5).contains(*y)) {
            return Err(domain(format!("outcome must be in 1..=5, got {y}")));
        }
        let mut out = self.clone();
        for (r, &y) in out.records.iter_mut().zip(outcomes) {
            r.outcome = y;
        }
        Ok(out)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(HEADER)?;
        for r in &self.records {
            w.write_record([
                r.session.to_string(),
                r.a_id.to_string(),
                r.b_id.to_string(),
                r.game.to_string(),
                r.outcome.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

const HEADER: [&str; 5] = ["session", "a_id", "b_id", "game", "outcome"];

fn check_record(r: &GameRecord) -> Result<()> {
    if !(1..=5).contains(&r.outcome) {
        return Err(domain(format!(
            "outcome must be in 1..=5, got {}",
            r.outcome
        )));
    }
    if r.game == 0 {
        return Err(domain("game number must be at least 1"));
    }
    Ok(())
}

/// Parses and validates a dataset CSV.
pub fn parse_dataset(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header \"{}\"", HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    let mut seen: HashMap<(u32, u32, u32), u64> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        if row.len() != 5 {
            return Err(parse_err(format!("expected 5 fields, found {}", row.len())));
        }
        let field = |k: usize| -> Result<u32> {
            row[k].parse::<u32>().map_err(|_| {
                parse_err(format!(
                    "field {} is not a non-negative integer: {:?}",
                    HEADER[k], &row[k]
                ))
            })
        };
        let outcome = field(4)?;
        let r = GameRecord {
            session: field(0)?,
            a_id: field(1)?,
            b_id: field(2)?,
            game: field(3)?,
            outcome: u8::try_from(outcome).unwrap_or(u8::MAX),
        };
        check_record(&r).map_err(|e| match e {
            Error::Domain(m) => parse_err(m),
            other => other,
        })?;
        if let Some(first) = seen.insert((r.session, r.a_id, r.b_id), line) {
            return Err(parse_err(format!(
                "duplicate pair session {} A {} B {} (first seen on line {first})",
                r.session, r.a_id, r.b_id
            )));
        }
        records.push(r);
    }
    if records.is_empty() {
        return Err(domain("no records"));
    }
    Ok(Dataset::build(records))
}

pub fn parse_dataset_path(path: impl AsRef<Path>) -> Result<Dataset> {
    let f = std::fs::File::open(path)?;
    parse_dataset(std::io::BufReader::new(f))
}

/// One session of the experiment: `n` subjects per side and the game number
/// each pair plays at, rows indexed by Player A and columns by Player B.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDesign {
    pub id: u32,
    pub n: usize,
    pub schedule: Vec<Vec<u32>>,
}

impl SessionDesign {
    /// Row `i` is the first row shifted right by `i`.
    pub fn cyclic(id: u32, n: usize) -> Self {
        let schedule = (0..n)
            .map(|i| (0..n).map(|j| ((j + n - i) % n) as u32 + 1).collect())
            .collect();
        SessionDesign { id, n, schedule }
    }

    fn violations(&self) -> Vec<String> {
        let n = self.n;
        let mut out = Vec::new();
        if self.schedule.len() != n || self.schedule.iter().any(|r| r.len() != n) {
            out.push(format!("session {}: schedule is not {n}x{n}", self.id));
            return out;
        }
        out.extend(latin_violations(self.id, n, |i, j| self.schedule[i][j]));
        out
    }
}

/// The schedule of every session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub sessions: Vec<SessionDesign>,
}

impl DesignSpec {
    /// Three sessions of 10, 9 and 10 subjects per side with cyclic schedules.
    pub fn standard() -> Self {
        DesignSpec {
            sessions: vec![
                SessionDesign::cyclic(1, 10),
                SessionDesign::cyclic(2, 9),
                SessionDesign::cyclic(3, 10),
            ],
        }
    }

    /// `copies` independent copies of this design with fresh session ids.
    pub fn replicated(&self, copies: usize) -> Self {
        let sessions = (0..copies)
            .flat_map(|_| self.sessions.iter().cloned())
            .enumerate()
            .map(|(k, s)| SessionDesign {
                id: k as u32 + 1,
                ..s
            })
            .collect();
        DesignSpec { sessions }
    }

    pub fn total_games(&self) -> usize {
        self.sessions.iter().map(|s| s.n * s.n).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions.is_empty() {
            return Err(domain("design has no sessions"));
        }
        let mut ids = HashSet::new();
        for s in &self.sessions {
            if !ids.insert(s.id) {
                return Err(domain(format!("session id {} appears twice", s.id)));
            }
            let v = s.violations();
            if !v.is_empty() {
                return Err(domain(v.join("; ")));
            }
        }
        Ok(())
    }

    /// Recovers the design of a dataset that passes [`validate_design`].
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let report = validate_design(data);
        if !report.valid {
            return Err(domain(format!(
                "dataset is not a Latin-square design: {}",
                report.violations.join("; ")
            )));
        }
        let mut sessions = Vec::new();
        let a_by = data.subjects_by_session(Role::A);
        let b_by = data.subjects_by_session(Role::B);
        for (pos, &id) in data.sessions().iter().enumerate() {
            let n = a_by[pos].len();
            let first_a = a_by[pos][0];
            let first_b = b_by[pos][0];
            let mut schedule = vec![vec![0u32; n]; n];
            for c in data.contexts().iter().filter(|c| c.session == pos) {
                schedule[c.a - first_a][c.b - first_b] = c.t;
            }
            sessions.push(SessionDesign { id, n, schedule });
        }
        Ok(DesignSpec { sessions })
    }

    /// Records for every scheduled pair with placeholder outcome 1. Player
    /// ids are `1..=n` on each side.
    pub fn skeleton(&self) -> Result<Dataset> {
        self.validate()?;
        let mut records = Vec::with_capacity(self.total_games());
        for s in &self.sessions {
            for i in 0..s.n {
                for j in 0..s.n {
                    records.push(GameRecord {
                        session: s.id,
                        a_id: i as u32 + 1,
                        b_id: j as u32 + 1,
                        game: s.schedule[i][j],
                        outcome: 1,
                    });
                }
            }
        }
        Dataset::new(records)
    }

    pub fn from_json_reader(reader: impl Read) -> Result<Self> {
        let d: DesignSpec = serde_json::from_reader(reader)?;
        d.validate()?;
        Ok(d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Lists rows and columns of an `n`x`n` grid that are not permutations of `1..=n`.
pub(crate) fn latin_violations(
    session: u32,
    n: usize,
    t: impl Fn(usize, usize) -> u32,
) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |label: String, values: Vec<u32>| {
        let mut counts = vec![0usize; n + 1];
        for &v in &values {
            if v == 0 || v as usize > n {
                out.push(format!(
                    "session {session}: {label} has game number {v} outside 1..={n}"
                ));
                return;
            }
            counts[v as usize] += 1;
        }
        for (v, &c) in counts.iter().enumerate().skip(1) {
            if c > 1 {
                out.push(format!(
                    "session {session}: {label} repeats game number {v}"
                ));
            }
        }
    };
    for i in 0..n {
        check(format!("row A{}", i + 1), (0..n).map(|j| t(i, j)).collect());
    }
    for j in 0..n {
        check(
            format!("column B{}", j + 1),
            (0..n).map(|i| t(i, j)).collect(),
        );
    }
    out
}

/// Outcome of [`validate_design`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignReport {
    pub valid: bool,
    pub sessions: Vec<SessionReport>,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SessionReport {
    pub session: u32,
    pub n: usize,
    pub games: usize,
    pub valid: bool,
}

/// Checks that every session is a complete Latin square of game numbers.
pub fn validate_design(data: &Dataset) -> DesignReport {
    let a_by = data.subjects_by_session(Role::A);
    let b_by = data.subjects_by_session(Role::B);
    let mut violations = Vec::new();
    let mut sessions = Vec::new();
    for (pos, &id) in data.sessions().iter().enumerate() {
        let before = violations.len();
        let (na, nb) = (a_by[pos].len(), b_by[pos].len());
        let games = data.contexts().iter().filter(|c| c.session == pos).count();
        if na != nb {
            violations.push(format!("session {id}: {na} Players A but {nb} Players B"));
        } else if games != na * na {
            violations.push(format!(
                "session {id}: {games} games recorded, a full square needs {}",
                na * na
            ));
        } else {
            let n = na;
            let (first_a, first_b) = (a_by[pos][0], b_by[pos][0]);
            let mut grid = vec![vec![0u32; n]; n];
            for c in data.contexts().iter().filter(|c| c.session == pos) {
                grid[c.a - first_a][c.b - first_b] = c.t;
            }
            // Rows and columns are labelled by rank of subject id.
            violations.extend(latin_violations(id, n, |i, j| grid[i][j]));
        }
        sessions.push(SessionReport {
            session: id,
            n: na,
            games,
            valid: violations.len() == before,
        });
    }
    DesignReport {
        valid: violations.is_empty(),
        sessions,
        violations,
    }
}

/// Population distribution of per-subject `(delta, beta)` for synthetic
/// hierarchical experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub mu_delta_a: f64,
    pub mu_delta_b: f64,
    pub mu_beta_a: f64,
    pub mu_beta_b: f64,
    pub sigma2_delta_a: f64,
    pub sigma2_delta_b: f64,
    pub sigma2_beta_a: f64,
    pub sigma2_beta_b: f64,
}

/// What generates a synthetic experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticModel {
    /// A fully specified model.
    Fixed(ModelSpec),
    /// Subject parameters are drawn from the population first.
    Hierarchical(PopulationParams),
}

/// A generated dataset together with the parameters that produced it.
#[derive(Clone, Debug)]
pub struct SyntheticExperiment {
    pub data: Dataset,
    pub truth: ModelSpec,
    pub population: Option<PopulationParams>,
    pub seed: u64,
}

impl SyntheticExperiment {
    /// JSON sidecar describing the generating parameters.
    pub fn truth_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Truth<'a> {
            seed: u64,
            model: &'a ModelSpec,
            #[serde(skip_serializing_if = "Option::is_none")]
            population: Option<&'a PopulationParams>,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            subjects_a: Vec<String>,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            subjects_b: Vec<String>,
        }
        let hier = matches!(self.truth, ModelSpec::RandomEffects { .. });
        let names = |role| {
            if hier {
                self.data
                    .subjects(role)
                    .iter()
                    .map(|s| s.to_string())
                    .collect()
            } else {
                Vec::new()
            }
        };
        Ok(serde_json::to_string_pretty(&Truth {
            seed: self.seed,
            model: &self.truth,
            population: self.population.as_ref(),
            subjects_a: names(Role::A),
            subjects_b: names(Role::B),
        })?)
    }
}

/// Simulates an experiment on `design`. Deterministic given `seed`.
pub fn generate_synthetic(
    design: &DesignSpec,
    model: &SyntheticModel,
    table: &PayoffTable,
    seed: u64,
) -> Result<SyntheticExperiment> {
    let skeleton = design.skeleton()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (truth, population) = match model {
        SyntheticModel::Fixed(spec) => (spec.clone(), None),
        SyntheticModel::Hierarchical(pop) => {
            let mut draw = |n: usize, mu: f64, s2: f64| -> Result<Vec<f64>> {
                if !(s2 >= 0.0 && s2.is_finite()) {
                    return Err(domain(
                        "population variances must be finite and non-negative",
                    ));
                }
                let dist = Normal::new(mu, s2.sqrt()).map_err(|e| domain(e.to_string()))?;
                Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
            };
            let na = skeleton.subjects(Role::A).len();
            let nb = skeleton.subjects(Role::B).len();
            let spec = ModelSpec::RandomEffects {
                delta_a: draw(na, pop.mu_delta_a, pop.sigma2_delta_a)?,
                beta_a: draw(na, pop.mu_beta_a, pop.sigma2_beta_a)?,
                delta_b: draw(nb, pop.mu_delta_b, pop.sigma2_delta_b)?,
                beta_b: draw(nb, pop.mu_beta_b, pop.sigma2_beta_b)?,
            };
            (spec, Some(pop.clone()))
        }
    };
    truth.validate_for(&skeleton)?;
    // Outcomes use their own stream so the subject draws do not shift them.
    let mut outcome_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let data = simulate_replicate(&truth, &skeleton, table, &mut outcome_rng)?;
    Ok(SyntheticExperiment {
        data,
        truth,
        population,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_design_has_281_games() {
        let d = DesignSpec::standard();
        assert_eq!(d.total_games(), 281);
        d.validate().unwrap();
        assert_eq!(d.sessions[0].schedule[0], (1..=10).collect::<Vec<u32>>());
        assert_eq!(
            d.sessions[0].schedule[1],
            vec![10, 1, 2, 3, 4, 5, 6, 7, 8, 9]
        );
        assert_eq!(
            d.sessions[0].schedule[9],
            vec![2, 3, 4, 5, 6, 7, 8, 9, 10, 1]
        );
    }

    #[test]
    fn parse_well_formed_standard_file() {
        let data = DesignSpec::standard().skeleton().unwrap();
        let csv = data.to_csv_string().unwrap();
        let parsed = parse_dataset(csv.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 281);
        assert_eq!(parsed, data);
        assert_eq!(parsed.subjects(Role::A).len(), 29);
        assert_eq!(parsed.subjects(Role::B).len(), 29);
        assert!(validate_design(&parsed).valid);
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = parse_dataset("session,a_id,b_id,game,outcome\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("no records"), "{err}");
        assert!(parse_dataset("".as_bytes()).is_err());
    }

    #[test]
    fn duplicate_pair_is_named() {
        let csv = "session,a_id,b_id,game,outcome\n1,1,2,1,3\n1,1,2,2,3\n";
        let err = parse_dataset(csv.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate pair session 1 A 1 B 2"), "{msg}");
        assert!(msg.starts_with("line 3"), "{msg}");
    }

    #[test]
    fn bad_rows_report_line_numbers() {
        let csv = "session,a_id,b_id,game,outcome\n1,1,1,1,3\n1,2,1,2,6\n";
        let err = parse_dataset(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3"), "{err}");
        let csv = "session,a_id,b_id,game,outcome\n1,x,1,1,3\n";
        let err = parse_dataset(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("a_id"), "{err}");
        let csv = "session,a,b_id,game,outcome\n1,1,1,1,3\n";
        assert!(parse_dataset(csv.as_bytes()).is_err());
    }

    #[test]
    fn swapped_game_numbers_fail_validation() {
        let mut design = DesignSpec::standard();
        design.sessions[0].schedule[0].swap(1, 4);
        let mut records = Vec::new();
        for s in &design.sessions {
            for i in 0..s.n {
                for j in 0..s.n {
                    records.push(GameRecord {
                        session: s.id,
                        a_id: i as u32 + 1,
                        b_id: j as u32 + 1,
                        game: s.schedule[i][j],
                        outcome: 2,
                    });
                }
            }
        }
        let data = Dataset::new(records).unwrap();
        let report = validate_design(&data);
        assert!(!report.valid);
        assert!(
            report.violations.iter().any(|v| v.contains("column B2")),
            "{:?}",
            report.violations
        );
        assert!(report.violations.iter().any(|v| v.contains("column B5")));
        assert!(!report.sessions[0].valid);
        assert!(report.sessions[1].valid);
    }

    #[test]
    fn incomplete_square_fails_validation() {
        let data = DesignSpec::standard().skeleton().unwrap();
        let records: Vec<_> = data.records()[1..].to_vec();
        let report = validate_design(&Dataset::new(records).unwrap());
        assert!(!report.valid);
    }

    #[test]
    fn design_roundtrips_through_dataset_and_json() {
        let design = DesignSpec::standard();
        let data = design.skeleton().unwrap();
        assert_eq!(DesignSpec::from_dataset(&data).unwrap(), design);
        let json = design.to_json().unwrap();
        assert_eq!(
            DesignSpec::from_json_reader(json.as_bytes()).unwrap(),
            design
        );
    }

    #[test]
    fn replicated_design() {
        let d = DesignSpec::standard().replicated(5);
        assert_eq!(d.sessions.len(), 15);
        assert_eq!(d.total_games(), 5 * 281);
        d.validate().unwrap();
    }

    #[test]
    fn spne_limit_generates_all_ones() {
        let exp = generate_synthetic(
            &DesignSpec::standard(),
            &SyntheticModel::Fixed(ModelSpec::OneParam { lambda: 1e6 }),
            &PayoffTable::default(),
            3,
        )
        .unwrap();
        assert_eq!(exp.data.len(), 281);
        assert!(exp.data.records().iter().all(|r| r.outcome == 1));
    }

    #[test]
    fn generation_is_deterministic() {
        let model = SyntheticModel::Hierarchical(PopulationParams {
            mu_delta_a: 1.0,
            mu_delta_b: 0.0,
            mu_beta_a: 0.05,
            mu_beta_b: 0.0,
            sigma2_delta_a: 0.5,
            sigma2_delta_b: 0.2,
            sigma2_beta_a: 0.01,
            sigma2_beta_b: 0.01,
        });
        let t = PayoffTable::default();
        let a = generate_synthetic(&DesignSpec::standard(), &model, &t, 17).unwrap();
        let b = generate_synthetic(&DesignSpec::standard(), &model, &t, 17).unwrap();
        let c = generate_synthetic(&DesignSpec::standard(), &model, &t, 18).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.data.outcomes(), c.data.outcomes());
        assert!(validate_design(&a.data).valid);
        assert!(a.truth_json().unwrap().contains("1:A:1"));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..4, 2usize..7, any::<u64>()).prop_map(|(sessions, n, seed)| {
            let design = DesignSpec {
                sessions: (0..sessions)
                    .map(|s| SessionDesign::cyclic(s as u32 + 1, n))
                    .collect(),
            };
            let model = SyntheticModel::Fixed(ModelSpec::Learning {
                lambda: 0.8,
                beta: 0.1,
            });
            generate_synthetic(&design, &model, &PayoffTable::default(), seed)
                .unwrap()
                .data
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn csv_roundtrip(data in arb_dataset()) {
            let parsed = parse_dataset(data.to_csv_string().unwrap().as_bytes()).unwrap();
            prop_assert_eq!(parsed, data);
        }

        #[test]
        fn generated_data_passes_validation(data in arb_dataset()) {
            prop_assert!(validate_design(&data).valid);
        }
    }
}
