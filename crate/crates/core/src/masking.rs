//! Inference tasks expressed as masking schemes over trajectory windows.
//!
//! A window holds `k` timesteps indexed `0..k`. Each scheme decides which
//! state/action tokens the model sees (`*_in`) and which it is scored on
//! (`*_out`). The single return-to-go token sits at position 0 and is never a
//! loss target.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{ActionToken, RtgToken, StateToken, Window};

pub const DEFAULT_WAYPOINT_PROB: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    Bc,
    Goal,
    Rc,
    Waypoint,
    Future,
    Past,
    FwdDyn,
    InvDyn,
    All,
    Rnd,
}

impl SchemeId {
    /// The eight concrete tasks, in the order `ALL` draws from.
    pub const CONCRETE: [SchemeId; 8] = [
        SchemeId::Bc,
        SchemeId::Goal,
        SchemeId::Rc,
        SchemeId::Waypoint,
        SchemeId::Future,
        SchemeId::Past,
        SchemeId::FwdDyn,
        SchemeId::InvDyn,
    ];

    pub const EVERY: [SchemeId; 10] = [
        SchemeId::Bc,
        SchemeId::Goal,
        SchemeId::Rc,
        SchemeId::Waypoint,
        SchemeId::Future,
        SchemeId::Past,
        SchemeId::FwdDyn,
        SchemeId::InvDyn,
        SchemeId::All,
        SchemeId::Rnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Bc => "BC",
            SchemeId::Goal => "GOAL",
            SchemeId::Rc => "RC",
            SchemeId::Waypoint => "WAYPOINT",
            SchemeId::Future => "FUTURE",
            SchemeId::Past => "PAST",
            SchemeId::FwdDyn => "FWD_DYN",
            SchemeId::InvDyn => "INV_DYN",
            SchemeId::All => "ALL",
            SchemeId::Rnd => "RND",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let upper = s.to_ascii_uppercase().replace('-', "_");
        Self::EVERY
            .into_iter()
            .find(|id| id.name() == upper)
            .ok_or_else(|| Error::Config(format!("unknown masking scheme `{s}`")))
    }

    /// Smallest window length the scheme can be drawn at.
    pub fn min_k(self) -> usize {
        match self {
            SchemeId::Past | SchemeId::FwdDyn | SchemeId::InvDyn | SchemeId::All => 2,
            _ => 1,
        }
    }

    fn is_bc_family(self) -> bool {
        matches!(
            self,
            SchemeId::Bc | SchemeId::Goal | SchemeId::Rc | SchemeId::Waypoint
        )
    }
}

impl Serialize for SchemeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SchemeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SchemeId::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskPattern {
    pub k: usize,
    pub state_in: Vec<bool>,
    pub action_in: Vec<bool>,
    pub rtg_in: bool,
    pub state_out: Vec<bool>,
    pub action_out: Vec<bool>,
}

impl MaskPattern {
    /// Everything hidden, nothing scored.
    pub fn hidden(k: usize) -> Self {
        Self {
            k,
            state_in: vec![false; k],
            action_in: vec![false; k],
            rtg_in: false,
            state_out: vec![false; k],
            action_out: vec![false; k],
        }
    }

    pub fn num_targets(&self) -> usize {
        self.state_out.iter().chain(&self.action_out).filter(|b| **b).count()
    }

    pub fn num_hidden(&self) -> usize {
        self.state_in.iter().chain(&self.action_in).filter(|b| !**b).count()
    }

    /// Input and target flags never overlap.
    pub fn is_disjoint(&self) -> bool {
        let clash = |a: &[bool], b: &[bool]| a.iter().zip(b).any(|(x, y)| *x && *y);
        !clash(&self.state_in, &self.state_out) && !clash(&self.action_in, &self.action_out)
    }

    /// One `name=0101...` line per flag vector.
    pub fn to_debug_lines(&self) -> String {
        let bits = |v: &[bool]| v.iter().map(|b| if *b { '1' } else { '0' }).collect::<String>();
        format!(
            "state_in={}\naction_in={}\nrtg_in={}\nstate_out={}\naction_out={}",
            bits(&self.state_in),
            bits(&self.action_in),
            u8::from(self.rtg_in),
            bits(&self.state_out),
            bits(&self.action_out)
        )
    }

    /// Hide every token the mask does not reveal.
    pub fn apply(&self, window: &Window<'_>) -> MaskedWindow {
        MaskedWindow {
            states: window
                .states
                .iter()
                .zip(&self.state_in)
                .map(|(s, v)| v.then_some(*s))
                .collect(),
            actions: window
                .actions
                .iter()
                .zip(&self.action_in)
                .map(|(a, v)| v.then_some(*a))
                .collect(),
            rtg: self.rtg_in.then_some(window.rtg),
        }
    }
}

/// A window with hidden tokens replaced by `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedWindow {
    pub states: Vec<Option<StateToken>>,
    pub actions: Vec<Option<ActionToken>>,
    pub rtg: Option<RtgToken>,
}

impl MaskedWindow {
    /// Fill hidden slots from ground truth.
    pub fn unmask(&self, truth: &Window<'_>) -> (Vec<StateToken>, Vec<ActionToken>, RtgToken) {
        let states = self
            .states
            .iter()
            .zip(truth.states)
            .map(|(s, t)| s.unwrap_or(*t))
            .collect();
        let actions = self
            .actions
            .iter()
            .zip(truth.actions)
            .map(|(a, t)| a.unwrap_or(*t))
            .collect();
        (states, actions, self.rtg.unwrap_or(truth.rtg))
    }
}

fn check_k(scheme: SchemeId, k: usize) -> Result<()> {
    if k < scheme.min_k() {
        return Err(Error::SchemeInapplicable {
            scheme: scheme.name().to_string(),
            k,
        });
    }
    Ok(())
}

/// BC-family mask with the history length `i` given explicitly.
///
/// States `0..=i` and actions `0..i` are visible and only `a_i` is scored.
pub fn bc_family_at(
    scheme: SchemeId,
    k: usize,
    i: usize,
    waypoints: &[usize],
) -> Result<MaskPattern> {
    if !scheme.is_bc_family() {
        return Err(Error::Config(format!("{scheme} is not a BC-family scheme")));
    }
    check_k(scheme, k)?;
    if i >= k {
        return Err(Error::WindowOutOfRange {
            start: i,
            len: 1,
            horizon: k,
        });
    }
    let mut m = MaskPattern::hidden(k);
    for t in 0..=i {
        m.state_in[t] = true;
    }
    for t in 0..i {
        m.action_in[t] = true;
    }
    m.action_out[i] = true;
    match scheme {
        SchemeId::Goal => m.state_in[k - 1] = true,
        SchemeId::Rc => m.rtg_in = true,
        SchemeId::Waypoint => {
            for &w in waypoints {
                if w <= i || w + 1 >= k {
                    return Err(Error::InvalidWaypoint {
                        position: w,
                        lo: i + 1,
                        hi: k.saturating_sub(2),
                    });
                }
                m.state_in[w] = true;
            }
        }
        _ => {}
    }
    Ok(m)
}

/// Samples a BC-family mask. For `WAYPOINT`, each intermediate state after the
/// history is revealed with `waypoint_prob` unless `explicit_waypoints` is set.
pub fn bc_family_mask(
    scheme: SchemeId,
    k: usize,
    rng: &mut impl Rng,
    waypoint_prob: f64,
    explicit_waypoints: Option<&[usize]>,
) -> Result<MaskPattern> {
    check_k(scheme, k)?;
    let i = rng.random_range(0..k);
    if scheme != SchemeId::Waypoint {
        return bc_family_at(scheme, k, i, &[]);
    }
    let waypoints: Vec<usize> = match explicit_waypoints {
        Some(w) => w.to_vec(),
        None => (i + 1..k.saturating_sub(1))
            .filter(|_| rng.random_bool(waypoint_prob))
            .collect(),
    };
    bc_family_at(scheme, k, i, &waypoints)
}

pub fn future_at(k: usize, i: usize) -> Result<MaskPattern> {
    let mut m = bc_family_at(SchemeId::Bc, k, i, &[])?;
    for t in i..k {
        m.action_out[t] = true;
    }
    for t in i + 1..k {
        m.state_out[t] = true;
    }
    Ok(m)
}

pub fn future_mask(k: usize, rng: &mut impl Rng) -> Result<MaskPattern> {
    check_k(SchemeId::Future, k)?;
    let i = rng.random_range(0..k);
    future_at(k, i)
}

/// Tokens `i..k` visible, everything before them scored.
pub fn past_at(k: usize, i: usize) -> Result<MaskPattern> {
    check_k(SchemeId::Past, k)?;
    if i == 0 || i >= k {
        return Err(Error::WindowOutOfRange {
            start: i,
            len: 1,
            horizon: k,
        });
    }
    let mut m = MaskPattern::hidden(k);
    for t in i..k {
        m.state_in[t] = true;
        m.action_in[t] = true;
    }
    for t in 0..i {
        m.state_out[t] = true;
        m.action_out[t] = true;
    }
    Ok(m)
}

pub fn past_mask(k: usize, rng: &mut impl Rng) -> Result<MaskPattern> {
    check_k(SchemeId::Past, k)?;
    let i = rng.random_range(1..k);
    past_at(k, i)
}

/// Forward: `(s_i, a_i) -> s_{i+1}`. Inverse: `(s_i, a_{i-1}) -> s_{i-1}`.
pub fn dynamics_at(direction: Direction, k: usize, i: usize) -> Result<MaskPattern> {
    let scheme = match direction {
        Direction::Forward => SchemeId::FwdDyn,
        Direction::Inverse => SchemeId::InvDyn,
    };
    check_k(scheme, k)?;
    let ok = match direction {
        Direction::Forward => i + 1 < k,
        Direction::Inverse => i >= 1 && i < k,
    };
    if !ok {
        return Err(Error::WindowOutOfRange {
            start: i,
            len: 1,
            horizon: k,
        });
    }
    let mut m = MaskPattern::hidden(k);
    match direction {
        Direction::Forward => {
            m.state_in[i] = true;
            m.action_in[i] = true;
            m.state_out[i + 1] = true;
        }
        Direction::Inverse => {
            m.state_in[i] = true;
            m.action_in[i - 1] = true;
            m.state_out[i - 1] = true;
        }
    }
    Ok(m)
}

pub fn dynamics_mask(direction: Direction, k: usize, rng: &mut impl Rng) -> Result<MaskPattern> {
    let scheme = match direction {
        Direction::Forward => SchemeId::FwdDyn,
        Direction::Inverse => SchemeId::InvDyn,
    };
    check_k(scheme, k)?;
    let i = match direction {
        Direction::Forward => rng.random_range(0..k - 1),
        Direction::Inverse => rng.random_range(1..k),
    };
    dynamics_at(direction, k, i)
}

/// Uniform choice among `schemes`, then delegation. `ALL` is this with the
/// eight concrete schemes.
pub fn multi_mask(
    schemes: &[SchemeId],
    k: usize,
    rng: &mut impl Rng,
    waypoint_prob: f64,
) -> Result<(SchemeId, MaskPattern)> {
    if schemes.is_empty() {
        return Err(Error::Config("empty scheme set".into()));
    }
    for s in schemes {
        check_k(*s, k)?;
    }
    let chosen = schemes[rng.random_range(0..schemes.len())];
    let mask = sample_mask(chosen, k, rng, waypoint_prob)?;
    Ok((chosen, mask))
}

pub fn composite_mask(k: usize, rng: &mut impl Rng) -> Result<(SchemeId, MaskPattern)> {
    check_k(SchemeId::All, k)?;
    multi_mask(&SchemeId::CONCRETE, k, rng, DEFAULT_WAYPOINT_PROB)
}

/// Random masking with the masking probability supplied by the caller.
pub fn random_mask_with_p(k: usize, p_mask: f64, rng: &mut impl Rng) -> MaskPattern {
    let mut m = MaskPattern::hidden(k);
    for t in 0..k {
        m.state_in[t] = rng.random::<f64>() >= p_mask;
    }
    for t in 0..k {
        m.action_in[t] = rng.random::<f64>() >= p_mask;
    }
    m.rtg_in = rng.random_bool(0.5);
    for t in 0..k {
        m.state_out[t] = !m.state_in[t];
        m.action_out[t] = !m.action_in[t];
    }
    m
}

/// Draws the masking probability uniformly from `[0, 1)`, so the number of
/// hidden tokens is uniform over `0..=2k`.
pub fn random_mask(k: usize, rng: &mut impl Rng) -> Result<MaskPattern> {
    check_k(SchemeId::Rnd, k)?;
    let p: f64 = rng.random();
    Ok(random_mask_with_p(k, p, rng))
}

/// Draw a mask for any scheme.
pub fn sample_mask(
    scheme: SchemeId,
    k: usize,
    rng: &mut impl Rng,
    waypoint_prob: f64,
) -> Result<MaskPattern> {
    match scheme {
        SchemeId::Bc | SchemeId::Goal | SchemeId::Rc | SchemeId::Waypoint => {
            bc_family_mask(scheme, k, rng, waypoint_prob, None)
        }
        SchemeId::Future => future_mask(k, rng),
        SchemeId::Past => past_mask(k, rng),
        SchemeId::FwdDyn => dynamics_mask(Direction::Forward, k, rng),
        SchemeId::InvDyn => dynamics_mask(Direction::Inverse, k, rng),
        SchemeId::All => composite_mask(k, rng).map(|(_, m)| m),
        SchemeId::Rnd => random_mask(k, rng),
    }
}
