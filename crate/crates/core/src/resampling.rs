//! Design-faithful randomization tests and posterior predictive tests.
//!
//! Both kinds of test compare one of four statistics on the observed data
//! against a reference distribution:
//!
//! * the least-squares slope of outcome on game number (lower tail);
//! * one-way F statistics grouping outcomes by Player A, by Player B or by
//!   session (upper tail).
//!
//! Randomization references come from permutations that keep every session a
//! Latin square. The slope test permutes rows and columns of each session's
//! game-number grid, so every pair keeps its outcome but plays it at another
//! time. The Player A test holds each outcome at its (Player B, game number)
//! cell and permutes which Player A sits there; the Player B test is the
//! mirror image. No permutation of subjects across sessions preserves the
//! design, so the session statistic is only available as a posterior
//! predictive test.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::PosteriorSamples;
use crate::data::{latin_violations, Dataset, DesignSpec, GameRecord};
use crate::error::{domain, usage, Result};
use crate::game::{outcome_distribution_unchecked, OutcomeDistribution, PayoffTable, Role};
use crate::models::{random_effects_profile, ModelFamily, ModelSpec, SessionBeliefs};

/// Test statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    Slope,
    FPlayersA,
    FPlayersB,
    FSessions,
}

impl Statistic {
    pub const ALL: [Statistic; 4] = [
        Statistic::Slope,
        Statistic::FPlayersA,
        Statistic::FPlayersB,
        Statistic::FSessions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Slope => "slope",
            Statistic::FPlayersA => "f-players-a",
            Statistic::FPlayersB => "f-players-b",
            Statistic::FSessions => "f-sessions",
        }
    }

    /// Slope tests look for a more negative trend; F tests for more
    /// between-group variation.
    pub fn tail(self) -> Tail {
        match self {
            Statistic::Slope => Tail::Lower,
            _ => Tail::Upper,
        }
    }

    fn grouping(self) -> Option<Grouping> {
        match self {
            Statistic::Slope => None,
            Statistic::FPlayersA => Some(Grouping::PlayersA),
            Statistic::FPlayersB => Some(Grouping::PlayersB),
            Statistic::FSessions => Some(Grouping::Sessions),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| usage(format!("unknown statistic {s:?}; expected slope, f-players-a, f-players-b or f-sessions")))
    }
}

/// Statistics that have a design-faithful randomization test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomizationStatistic {
    Slope,
    FPlayersA,
    FPlayersB,
}

impl From<RandomizationStatistic> for Statistic {
    fn from(s: RandomizationStatistic) -> Self {
        match s {
            RandomizationStatistic::Slope => Statistic::Slope,
            RandomizationStatistic::FPlayersA => Statistic::FPlayersA,
            RandomizationStatistic::FPlayersB => Statistic::FPlayersB,
        }
    }
}

impl TryFrom<Statistic> for RandomizationStatistic {
    type Error = crate::Error;

    fn try_from(s: Statistic) -> Result<Self> {
        match s {
            Statistic::Slope => Ok(RandomizationStatistic::Slope),
            Statistic::FPlayersA => Ok(RandomizationStatistic::FPlayersA),
            Statistic::FPlayersB => Ok(RandomizationStatistic::FPlayersB),
            Statistic::FSessions => Err(usage(
                "no randomization test for sessions: subjects are nested in sessions, and moving a subject \
                 to another session breaks its Latin square; use a posterior predictive test instead",
            )),
        }
    }
}

/// How outcomes are grouped for an F statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grouping {
    PlayersA,
    PlayersB,
    Sessions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    Lower,
    Upper,
}

/// An F statistic with a flag for degenerate within-group variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FStatistic {
    pub value: f64,
    pub flag: FFlag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FFlag {
    Ok,
    /// No variation at all; reported as 0.
    Degenerate,
    /// No within-group variation but some between groups; reported as +inf.
    Infinite,
}

/// Game numbers and group labels of a dataset, in record order.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub t: Vec<f64>,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub session: Vec<usize>,
    pub n_a: usize,
    pub n_b: usize,
    pub n_sessions: usize,
}

impl Layout {
    pub fn of(data: &Dataset) -> Self {
        let c = data.contexts();
        Layout {
            t: c.iter().map(|c| c.t as f64).collect(),
            a: c.iter().map(|c| c.a).collect(),
            b: c.iter().map(|c| c.b).collect(),
            session: c.iter().map(|c| c.session).collect(),
            n_a: data.subjects(Role::A).len(),
            n_b: data.subjects(Role::B).len(),
            n_sessions: data.sessions().len(),
        }
    }

    fn groups(&self, g: Grouping) -> (&[usize], usize) {
        match g {
            Grouping::PlayersA => (&self.a, self.n_a),
            Grouping::PlayersB => (&self.b, self.n_b),
            Grouping::Sessions => (&self.session, self.n_sessions),
        }
    }

    fn compute(&self, stat: Statistic, y: &[f64]) -> Result<f64> {
        match stat.grouping() {
            None => slope(&self.t, y),
            Some(g) => {
                let (labels, n) = self.groups(g);
                f_oneway(labels, n, y).map(|f| f.value)
            }
        }
    }
}

fn slope(t: &[f64], y: &[f64]) -> Result<f64> {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (ti, yi) in t.iter().zip(y) {
        sxy += (ti - tm) * (yi - ym);
        sxx += (ti - tm) * (ti - tm);
    }
    if sxx == 0.0 {
        return Err(domain("slope needs at least two distinct game numbers"));
    }
    Ok(sxy / sxx)
}

fn f_oneway(labels: &[usize], n_groups: usize, y: &[f64]) -> Result<FStatistic> {
    let mut sum = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (&g, &v) in labels.iter().zip(y) {
        sum[g] += v;
        count[g] += 1;
    }
    let groups = count.iter().filter(|&&c| c > 0).count();
    let total = y.len();
    if groups < 2 {
        return Err(domain("F statistic needs at least two groups"));
    }
    if total <= groups {
        return Err(domain("F statistic needs more observations than groups"));
    }
    let grand = y.iter().sum::<f64>() / total as f64;
    let means: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let ss_between: f64 = means
        .iter()
        .zip(&count)
        .map(|(m, &c)| c as f64 * (m - grand).powi(2))
        .sum();
    let ss_within: f64 = labels
        .iter()
        .zip(y)
        .map(|(&g, v)| (v - means[g]).powi(2))
        .sum();
    let scale = ss_between + ss_within;
    // Outcomes are small integers; treat round-off as zero.
    let tiny = 1e-12 * scale.max(1.0);
    if ss_within <= tiny {
        return Ok(if ss_between <= tiny {
            FStatistic {
                value: 0.0,
                flag: FFlag::Degenerate,
            }
        } else {
            FStatistic {
                value: f64::INFINITY,
                flag: FFlag::Infinite,
            }
        });
    }
    let ms_between = ss_between / (groups - 1) as f64;
    let ms_within = ss_within / (total - groups) as f64;
    Ok(FStatistic {
        value: ms_between / ms_within,
        flag: FFlag::Ok,
    })
}

fn outcomes_f64(data: &Dataset) -> Vec<f64> {
    data.records().iter().map(|r| r.outcome as f64).collect()
}

/// Least-squares slope of outcome on game number, pooled over sessions.
pub fn slope_statistic(data: &Dataset) -> Result<f64> {
    let t: Vec<f64> = data.records().iter().map(|r| r.game as f64).collect();
    slope(&t, &outcomes_f64(data))
}

/// Between-group over within-group mean square.
pub fn f_statistic(data: &Dataset, grouping: Grouping) -> Result<FStatistic> {
    let layout = Layout::of(data);
    let (labels, n) = layout.groups(grouping);
    f_oneway(labels, n, &outcomes_f64(data))
}

/// Any of the four statistics.
pub fn statistic(data: &Dataset, stat: Statistic) -> Result<f64> {
    Layout::of(data).compute(stat, &outcomes_f64(data))
}

/// One game of a session square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub t: u32,
    pub y: u8,
}

/// A session laid out with Players A on rows and Players B on columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionSquare {
    pub session: u32,
    pub n: usize,
    /// Subject ids of the rows.
    pub a_ids: Vec<u32>,
    /// Subject ids of the columns.
    pub b_ids: Vec<u32>,
    pub cells: Vec<Vec<Cell>>,
}

impl SessionSquare {
    /// One square per session, in session order.
    pub fn from_dataset(data: &Dataset) -> Result<Vec<SessionSquare>> {
        let a_by = data.subjects_by_session(Role::A);
        let b_by = data.subjects_by_session(Role::B);
        let mut out = Vec::with_capacity(data.sessions().len());
        for (pos, &id) in data.sessions().iter().enumerate() {
            let n = a_by[pos].len();
            if b_by[pos].len() != n {
                return Err(domain(format!(
                    "session {id} has unequal numbers of Players A and B"
                )));
            }
            let (a0, b0) = (a_by[pos][0], b_by[pos][0]);
            let mut cells = vec![vec![None; n]; n];
            for (r, c) in data
                .records()
                .iter()
                .zip(data.contexts())
                .filter(|(_, c)| c.session == pos)
            {
                cells[c.a - a0][c.b - b0] = Some(Cell {
                    t: r.game,
                    y: r.outcome,
                });
            }
            let cells = cells
                .into_iter()
                .map(|row| row.into_iter().collect::<Option<Vec<_>>>())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| domain(format!("session {id} is missing games")))?;
            let sq = SessionSquare {
                session: id,
                n,
                a_ids: a_by[pos]
                    .iter()
                    .map(|&k| data.subjects(Role::A)[k].id)
                    .collect(),
                b_ids: b_by[pos]
                    .iter()
                    .map(|&k| data.subjects(Role::B)[k].id)
                    .collect(),
                cells,
            };
            sq.validate()?;
            out.push(sq);
        }
        Ok(out)
    }

    /// Checks that game numbers form a Latin square and outcomes are valid.
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.n || self.cells.iter().any(|r| r.len() != self.n) {
            return Err(domain(format!(
                "session {}: cells are not {n}x{n}",
                self.session,
                n = self.n
            )));
        }
        if self.cells.iter().flatten().any(|c| !(1..=5).contains(&c.y)) {
            return Err(domain(format!(
                "session {}: outcome outside 1..=5",
                self.session
            )));
        }
        let v = latin_violations(self.session, self.n, |i, j| self.cells[i][j].t);
        if v.is_empty() {
            Ok(())
        } else {
            Err(domain(v.join("; ")))
        }
    }

    pub fn records(&self) -> impl Iterator<Item = GameRecord> + '_ {
        (0..self.n).flat_map(move |i| {
            (0..self.n).map(move |j| GameRecord {
                session: self.session,
                a_id: self.a_ids[i],
                b_id: self.b_ids[j],
                game: self.cells[i][j].t,
                outcome: self.cells[i][j].y,
            })
        })
    }
}

fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Applies a random row and column permutation to the game numbers only.
/// Each pair keeps its outcome.
pub fn permute_session(square: &SessionSquare, rng: &mut impl Rng) -> SessionSquare {
    let rows = random_permutation(square.n, rng);
    let cols = random_permutation(square.n, rng);
    permute_session_with(square, &rows, &cols)
}

/// [`permute_session`] with explicit permutations.
pub fn permute_session_with(
    square: &SessionSquare,
    rows: &[usize],
    cols: &[usize],
) -> SessionSquare {
    let mut out = square.clone();
    for i in 0..square.n {
        for j in 0..square.n {
            out.cells[i][j].t = square.cells[rows[i]][cols[j]].t;
        }
    }
    out
}

/// Reassigns the players of `role` under a random Latin-square permutation.
///
/// Seen with the other role on rows, game numbers on columns and `role` in
/// the table, the rows and columns of that table are permuted. Every outcome
/// keeps its opponent and game number and moves to another player of `role`.
pub fn permute_players(square: &SessionSquare, role: Role, rng: &mut impl Rng) -> SessionSquare {
    let rows = random_permutation(square.n, rng);
    let cols = random_permutation(square.n, rng);
    permute_players_with(square, role, &rows, &cols)
}

/// [`permute_players`] with explicit permutations of the other role (`rows`)
/// and of game numbers (`cols`).
pub fn permute_players_with(
    square: &SessionSquare,
    role: Role,
    rows: &[usize],
    cols: &[usize],
) -> SessionSquare {
    let n = square.n;
    // grid[other][t - 1] = index of the `role` player met at that time.
    let mut grid = vec![vec![0usize; n]; n];
    for i in 0..n {
        for j in 0..n {
            let t = square.cells[i][j].t as usize - 1;
            match role {
                Role::A => grid[j][t] = i,
                Role::B => grid[i][t] = j,
            }
        }
    }
    let mut out = square.clone();
    for other in 0..n {
        for t in 0..n {
            let old = grid[other][t];
            let new = grid[rows[other]][cols[t]];
            let (old_cell, new_pos) = match role {
                Role::A => (square.cells[old][other], (new, other)),
                Role::B => (square.cells[other][old], (other, new)),
            };
            out.cells[new_pos.0][new_pos.1] = old_cell;
        }
    }
    out
}

/// Result of a randomization or posterior predictive test.
#[derive(Clone, Debug, PartialEq)]
pub struct TestOutcome {
    pub statistic: Statistic,
    pub observed: f64,
    /// Permutation or replicate values, in task order.
    pub values: Vec<f64>,
    pub p_value: f64,
    pub tail: Tail,
}

impl TestOutcome {
    fn new(statistic: Statistic, observed: f64, values: Vec<f64>) -> Self {
        let tail = statistic.tail();
        let extreme = count_extreme(&values, observed, tail);
        let p_value = extreme as f64 / values.len() as f64;
        TestOutcome {
            statistic,
            observed,
            values,
            p_value,
            tail,
        }
    }

    /// Number of reference values at least as extreme as the observed one.
    pub fn extreme_count(&self) -> usize {
        count_extreme(&self.values, self.observed, self.tail)
    }

    /// `(k + 1) / (n + 1)`.
    pub fn corrected_p_value(&self) -> f64 {
        (self.extreme_count() + 1) as f64 / (self.values.len() + 1) as f64
    }

    /// Reference values that are infinite (F with no within-group variation).
    pub fn infinite_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_infinite()).count()
    }

    /// JSON with the finite reference values and a count of infinite ones.
    pub fn to_json(&self, include_corrected: bool) -> Result<String> {
        let finite: Vec<f64> = self
            .values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        let mut v = serde_json::json!({
            "statistic": self.statistic,
            "observed": if self.observed.is_finite() { serde_json::json!(self.observed) } else { serde_json::json!("inf") },
            "p_value": self.p_value,
            "tail": self.tail,
            "n": self.values.len(),
            "extreme_count": self.extreme_count(),
            "n_infinite": self.infinite_count(),
            "values": finite,
        });
        if include_corrected {
            v["p_value_corrected"] = self.corrected_p_value().into();
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }

    /// Single-column CSV of the finite reference values.
    pub fn write_values_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.statistic.name())?;
        for v in self.values.iter().filter(|v| v.is_finite()) {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }
}

fn count_extreme(values: &[f64], observed: f64, tail: Tail) -> usize {
    values
        .iter()
        .filter(|&&v| match tail {
            Tail::Lower => v <= observed,
            Tail::Upper => v >= observed,
        })
        .count()
}

/// Random generator for task `task` of a run seeded with `seed`.
pub(crate) fn substream(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

/// Randomization test of `stat` with `n_perm` design-faithful permutations.
///
/// Each permutation permutes every session independently and pools them.
/// Permutation `k` draws from its own substream, so the result does not
/// depend on the number of threads.
pub fn randomization_test(
    data: &Dataset,
    stat: RandomizationStatistic,
    n_perm: usize,
    seed: u64,
) -> Result<TestOutcome> {
    if n_perm == 0 {
        return Err(usage("at least one permutation is needed"));
    }
    let squares = SessionSquare::from_dataset(data)?;
    let stat_full: Statistic = stat.into();
    let observed = statistic(data, stat_full)?;

    let values = (0..n_perm)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            let permuted: Vec<SessionSquare> = squares
                .iter()
                .map(|sq| match stat {
                    RandomizationStatistic::Slope => permute_session(sq, &mut rng),
                    RandomizationStatistic::FPlayersA => permute_players(sq, Role::A, &mut rng),
                    RandomizationStatistic::FPlayersB => permute_players(sq, Role::B, &mut rng),
                })
                .collect();
            let pooled = Dataset::new(permuted.iter().flat_map(|s| s.records()).collect())?;
            statistic(&pooled, stat_full)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TestOutcome::new(stat_full, observed, values))
}

/// Draws new outcomes for every game of `design` under `model`. Only the
/// records' sessions, subjects and game numbers are used.
pub fn simulate_replicate(
    model: &ModelSpec,
    design: &Dataset,
    table: &PayoffTable,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    model.validate_for(design)?;
    let outcomes = replicate_outcomes(model, design, table, rng)?;
    design.with_outcomes(&outcomes)
}

fn replicate_outcomes(
    model: &ModelSpec,
    design: &Dataset,
    table: &PayoffTable,
    rng: &mut impl Rng,
) -> Result<Vec<u8>> {
    if let ModelSpec::RandomEffects { .. } = model {
        let beliefs = SessionBeliefs::from_model(model, design)?;
        return Ok(design
            .contexts()
            .iter()
            .map(|c| {
                let a = model.subject(Role::A, c.a).unwrap();
                let b = model.subject(Role::B, c.b).unwrap();
                let theta = outcome_distribution_unchecked(&random_effects_profile(
                    table,
                    a,
                    b,
                    beliefs.session(c.session),
                    c.t,
                ));
                theta.sample_with(rng.random())
            })
            .collect());
    }
    let mut cache: Vec<Option<OutcomeDistribution>> = Vec::new();
    Ok(design
        .contexts()
        .iter()
        .map(|c| {
            let t = c.t as usize;
            if cache.len() <= t {
                cache.resize(t + 1, None);
            }
            let theta = *cache[t].get_or_insert_with(|| model.distribution_at(table, c.t).unwrap());
            theta.sample_with(rng.random())
        })
        .collect())
}

/// Posterior predictive tests of several statistics sharing the same
/// replicates: one replicate per retained draw, replicate `k` drawn from
/// substream `k` of `seed`.
pub fn posterior_predictive_tests(
    samples: &PosteriorSamples,
    family: ModelFamily,
    design: &DesignSpec,
    observed: &Dataset,
    stats: &[Statistic],
    table: &PayoffTable,
    seed: u64,
) -> Result<Vec<TestOutcome>> {
    let observed_design = DesignSpec::from_dataset(observed)?;
    if &observed_design != design {
        return Err(usage("the observed data do not follow the supplied design"));
    }
    if samples.n_draws() == 0 {
        return Err(usage("posterior sample is empty"));
    }
    let layout = Layout::of(observed);
    let y_obs = outcomes_f64(observed);
    let observed_values = stats
        .iter()
        .map(|&s| layout.compute(s, &y_obs))
        .collect::<Result<Vec<_>>>()?;
    let rows = (0..samples.n_draws())
        .into_par_iter()
        .map(|k| {
            let model = samples.model_for_draw(k, family, observed)?;
            let mut rng = substream(seed, k as u64);
            let y: Vec<f64> = replicate_outcomes(&model, observed, table, &mut rng)?
                .into_iter()
                .map(f64::from)
                .collect();
            stats
                .iter()
                .map(|&s| layout.compute(s, &y))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stats
        .iter()
        .enumerate()
        .map(|(i, &s)| TestOutcome::new(s, observed_values[i], rows.iter().map(|r| r[i]).collect()))
        .collect())
}

/// Posterior predictive test of a single statistic.
pub fn posterior_predictive_test(
    samples: &PosteriorSamples,
    family: ModelFamily,
    design: &DesignSpec,
    observed: &Dataset,
    stat: Statistic,
    table: &PayoffTable,
    seed: u64,
) -> Result<TestOutcome> {
    Ok(
        posterior_predictive_tests(samples, family, design, observed, &[stat], table, seed)?
            .remove(0),
    )
}
