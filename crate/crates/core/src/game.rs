//! The four-stage centipede game.
//!
//! Player A moves at stages 1 and 3, Player B at stages 2 and 4. Taking ends
//! the game; passing at stage 4 ends it at the fifth terminal node. Outcome
//! `y` is the number of the terminal node reached, `1..=5`.
//!
//! Payoffs are held as integer cents and converted to dollars only when a
//! utility is evaluated.

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Number of terminal nodes.
pub const OUTCOMES: usize = 5;

/// Which side of the game a subject plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::A => Role::B,
            Role::B => Role::A,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::A => f.write_str("A"),
            Role::B => f.write_str("B"),
        }
    }
}

/// Money paid to each role at each terminal node.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffTable {
    cents: [[i64; 2]; OUTCOMES],
    dollars: [[f64; 2]; OUTCOMES],
}

impl Default for PayoffTable {
    /// The 40/10 cent schedule that doubles and swaps at every stage.
    fn default() -> Self {
        PayoffTable::from_cents([[40, 10], [20, 80], [160, 40], [80, 320], [640, 160]])
            .expect("default payoffs are positive")
    }
}

impl PayoffTable {
    /// Builds a table from `[A, B]` cent amounts for outcomes 1..=5.
    pub fn from_cents(cents: [[i64; 2]; OUTCOMES]) -> Result<Self> {
        let mut dollars = [[0.0; 2]; OUTCOMES];
        for (k, row) in cents.iter().enumerate() {
            for (r, &c) in row.iter().enumerate() {
                if c <= 0 {
                    return Err(domain(format!(
                        "payoff for outcome {} role {} must be positive, got {} cents",
                        k + 1,
                        if r == 0 { "A" } else { "B" },
                        c
                    )));
                }
                dollars[k][r] = c as f64 / 100.0;
            }
        }
        Ok(PayoffTable { cents, dollars })
    }

    pub fn cents(&self, outcome: u8, role: Role) -> Result<i64> {
        let k = outcome_index(outcome)?;
        Ok(self.cents[k][role as usize])
    }

    /// Dollar payoff of `outcome` to `role`.
    pub fn payoff(&self, outcome: u8, role: Role) -> Result<f64> {
        let k = outcome_index(outcome)?;
        Ok(self.dollars[k][role as usize])
    }

    #[inline]
    fn a(&self, k: usize) -> f64 {
        self.dollars[k - 1][0]
    }

    #[inline]
    fn b(&self, k: usize) -> f64 {
        self.dollars[k - 1][1]
    }

    /// B's gain from taking rather than passing at stage 4.
    #[inline]
    pub fn take_advantage_q2(&self) -> f64 {
        self.b(4) - self.b(5)
    }

    /// A's expected gain from taking at stage 3, given B takes at stage 4 w.p. `q2`.
    #[inline]
    pub fn take_advantage_p2(&self, q2: f64) -> f64 {
        self.a(3) - (q2 * self.a(4) + (1.0 - q2) * self.a(5))
    }

    /// B's expected gain from taking at stage 2.
    #[inline]
    pub fn take_advantage_q1(&self, p2: f64, q2: f64) -> f64 {
        self.b(2) - (p2 * self.b(3) + (1.0 - p2) * (q2 * self.b(4) + (1.0 - q2) * self.b(5)))
    }

    /// A's expected gain from taking at stage 1.
    #[inline]
    pub fn take_advantage_p1(&self, q1: f64, p2: f64, q2: f64) -> f64 {
        let later = p2 * self.a(3) + (1.0 - p2) * (q2 * self.a(4) + (1.0 - q2) * self.a(5));
        self.a(1) - (q1 * self.a(2) + (1.0 - q1) * later)
    }

    /// Reads `{"outcomes":[{"y":1,"A":0.40,"B":0.10}, ...]}`.
    pub fn from_json_reader(reader: impl Read) -> Result<Self> {
        let file: PayoffFile = serde_json::from_reader(reader)?;
        file.try_into()
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        PayoffTable::from_json_reader(std::io::BufReader::new(f))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PayoffFile::from(self))?)
    }
}

fn outcome_index(outcome: u8) -> Result<usize> {
    if (1..=OUTCOMES as u8).contains(&outcome) {
        Ok(outcome as usize - 1)
    } else {
        Err(domain(format!("outcome must be in 1..=5, got {outcome}")))
    }
}

#[derive(Serialize, Deserialize)]
struct PayoffFile {
    outcomes: Vec<PayoffEntry>,
}

#[derive(Serialize, Deserialize)]
struct PayoffEntry {
    y: u8,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
}

impl From<&PayoffTable> for PayoffFile {
    fn from(t: &PayoffTable) -> Self {
        PayoffFile {
            outcomes: (0..OUTCOMES)
                .map(|k| PayoffEntry {
                    y: k as u8 + 1,
                    a: t.dollars[k][0],
                    b: t.dollars[k][1],
                })
                .collect(),
        }
    }
}

impl TryFrom<PayoffFile> for PayoffTable {
    type Error = crate::Error;

    fn try_from(file: PayoffFile) -> Result<Self> {
        let mut cents = [[0i64; 2]; OUTCOMES];
        let mut seen = [false; OUTCOMES];
        for e in &file.outcomes {
            let k = outcome_index(e.y)?;
            if seen[k] {
                return Err(domain(format!("outcome {} listed twice", e.y)));
            }
            seen[k] = true;
            cents[k] = [to_cents(e.a)?, to_cents(e.b)?];
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(domain(format!(
                "outcome {} missing from payoff table",
                k + 1
            )));
        }
        PayoffTable::from_cents(cents)
    }
}

fn to_cents(dollars: f64) -> Result<i64> {
    let c = (dollars * 100.0).round();
    if !dollars.is_finite() || (dollars * 100.0 - c).abs() > 1e-6 {
        return Err(domain(format!(
            "payoff {dollars} is not a whole number of cents"
        )));
    }
    Ok(c as i64)
}

/// Conditional take probabilities at the four decision nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionProfile {
    /// A takes at stage 1.
    pub p1: f64,
    /// B takes at stage 2.
    pub q1: f64,
    /// A takes at stage 3.
    pub p2: f64,
    /// B takes at stage 4.
    pub q2: f64,
}

impl DecisionProfile {
    pub fn new(p1: f64, q1: f64, p2: f64, q2: f64) -> Result<Self> {
        let profile = DecisionProfile { p1, q1, p2, q2 };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p1", self.p1),
            ("q1", self.q1),
            ("p2", self.p2),
            ("q2", self.q2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(domain(format!(
                    "{name} must be a probability in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Probabilities of the five terminal nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub theta: [f64; OUTCOMES],
}

impl OutcomeDistribution {
    /// Probability of outcome `y` in `1..=5`.
    #[inline]
    pub fn prob(&self, y: u8) -> f64 {
        self.theta[y as usize - 1]
    }

    pub fn sum(&self) -> f64 {
        self.theta.iter().sum()
    }

    /// Point mass on "everyone passes".
    pub fn all_pass() -> Self {
        OutcomeDistribution {
            theta: [0.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Draws an outcome in `1..=5` from a uniform variate `u` in `[0, 1)`.
    #[inline]
    pub fn sample_with(&self, u: f64) -> u8 {
        let mut acc = 0.0;
        for (k, &p) in self.theta.iter().enumerate().take(OUTCOMES - 1) {
            acc += p;
            if u < acc {
                return k as u8 + 1;
            }
        }
        OUTCOMES as u8
    }
}

/// Outcome probabilities implied by a decision profile.
pub fn outcome_distribution(profile: &DecisionProfile) -> Result<OutcomeDistribution> {
    profile.validate()?;
    Ok(outcome_distribution_unchecked(profile))
}

#[inline]
pub(crate) fn outcome_distribution_unchecked(p: &DecisionProfile) -> OutcomeDistribution {
    let reach2 = 1.0 - p.p1;
    let reach3 = reach2 * (1.0 - p.q1);
    let reach4 = reach3 * (1.0 - p.p2);
    OutcomeDistribution {
        theta: [
            p.p1,
            reach2 * p.q1,
            reach3 * p.p2,
            reach4 * p.q2,
            reach4 * (1.0 - p.q2),
        ],
    }
}

/// Dollar payoff of `outcome` to `role` under `table`.
pub fn payoff(outcome: u8, role: Role, table: &PayoffTable) -> Result<f64> {
    table.payoff(outcome, role)
}
