//! Direction vocabulary and velocity-sequence labels.
//!
//! The vocabulary covers the lower hemisphere: eight horizontal directions at 45° azimuth
//! spacing (indices 0–7), the same azimuths tilted 45° downward (8–15) and straight down
//! (16). Index 17 is `stop`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::physics::{SimConfig, SimTrace};
use crate::scene::Vec3;
use crate::{Error, Result};

pub const NUM_DIRECTIONS: usize = 17;
pub const NUM_CLASSES: usize = 18;
pub const STOP_INDEX: usize = 17;
/// Maximum sequence length (and number of recurrent steps).
pub const MAX_STEPS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Token(u8);

impl Token {
    pub const STOP: Token = Token(STOP_INDEX as u8);

    pub fn new(index: usize) -> Result<Token> {
        if index < NUM_CLASSES {
            Ok(Token(index as u8))
        } else {
            Err(Error::InvalidToken(index))
        }
    }

    pub fn direction(index: usize) -> Result<Token> {
        if index < NUM_DIRECTIONS {
            Ok(Token(index as u8))
        } else {
            Err(Error::InvalidToken(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_stop(self) -> bool {
        self.index() == STOP_INDEX
    }
}

impl TryFrom<u8> for Token {
    type Error = Error;
    fn try_from(v: u8) -> Result<Token> {
        Token::new(v as usize)
    }
}

impl From<Token> for u8 {
    fn from(t: Token) -> u8 {
        t.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_stop() {
            f.write_str("stop")
        } else {
            write!(f, "d{}", self.0)
        }
    }
}

impl FromStr for Token {
    type Err = Error;
    fn from_str(s: &str) -> Result<Token> {
        if s == "stop" {
            return Ok(Token::STOP);
        }
        s.strip_prefix('d')
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("bad token {s:?}")))
            .and_then(Token::direction)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionVocabulary {
    directions: [Vec3; NUM_DIRECTIONS],
}

impl DirectionVocabulary {
    pub fn direction(&self, index: usize) -> Vec3 {
        self.directions[index]
    }

    pub fn directions(&self) -> &[Vec3; NUM_DIRECTIONS] {
        &self.directions
    }

    /// Index of the direction with the largest cosine to `unit`; ties go to the lowest index.
    pub fn nearest(&self, unit: Vec3) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, d) in self.directions.iter().enumerate() {
            let c = unit.dot(*d);
            if c > best_dot {
                best_dot = c;
                best = i;
            }
        }
        best
    }
}

impl Default for DirectionVocabulary {
    fn default() -> Self {
        build_vocabulary()
    }
}

pub fn build_vocabulary() -> DirectionVocabulary {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut directions = [Vec3::ZERO; NUM_DIRECTIONS];
    for k in 0..8 {
        let a = (k as f64 * 45.0).to_radians();
        let (sin, cos) = match k {
            // exact values on the axes
            0 => (0.0, 1.0),
            2 => (1.0, 0.0),
            4 => (0.0, -1.0),
            6 => (-1.0, 0.0),
            _ => a.sin_cos(),
        };
        directions[k] = Vec3::new(cos, sin, 0.0);
        directions[k + 8] = Vec3::new(cos * s, sin * s, -s);
    }
    directions[16] = Vec3::new(0.0, 0.0, -1.0);
    DirectionVocabulary { directions }
}

pub fn quantize_velocity(v: Vec3, vocab: &DirectionVocabulary, stop_speed: f64) -> Token {
    let speed = v.norm();
    if !(speed >= stop_speed) || speed == 0.0 {
        return Token::STOP;
    }
    Token(vocab.nearest(v / speed) as u8)
}

/// Ground-truth or predicted label: 1–6 tokens, `stop` only in final position, and
/// sequences shorter than six always end in `stop`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Token>", into = "Vec<Token>")]
pub struct VelocitySequence {
    tokens: Vec<Token>,
}

impl VelocitySequence {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() || tokens.len() > MAX_STEPS {
            return Err(Error::InvalidSequence(format!(
                "length {} outside 1..={MAX_STEPS}",
                tokens.len()
            )));
        }
        if tokens[..tokens.len() - 1].iter().any(|t| t.is_stop()) {
            return Err(Error::InvalidSequence("stop before the final position".into()));
        }
        if tokens.len() < MAX_STEPS && !tokens.last().unwrap().is_stop() {
            return Err(Error::InvalidSequence(
                "sequences shorter than the maximum must end in stop".into(),
            ));
        }
        Ok(Self { tokens })
    }

    /// Truncates a raw token stream at the first `stop` (inclusive) or at six tokens. A
/// stream that ends early without `stop` gets one appended.
    pub fn from_stream<I: IntoIterator<Item = Token>>(stream: I) -> Self {
        let mut tokens = Vec::with_capacity(MAX_STEPS);
        for t in stream.into_iter().take(MAX_STEPS) {
            tokens.push(t);
            if t.is_stop() {
                break;
            }
        }
        if tokens.len() < MAX_STEPS && tokens.last().is_none_or(|t| !t.is_stop()) {
            tokens.push(Token::STOP);
        }
        Self { tokens }
    }

    pub fn stop() -> Self {
        Self {
            tokens: vec![Token::STOP],
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens padded with `stop` to length `steps`.
    pub fn padded(&self, steps: usize) -> Vec<Token> {
        let mut out = self.tokens.clone();
        out.truncate(steps);
        out.resize(steps, Token::STOP);
        out
    }
}

impl TryFrom<Vec<Token>> for VelocitySequence {
    type Error = Error;
    fn try_from(tokens: Vec<Token>) -> Result<Self> {
        VelocitySequence::new(tokens)
    }
}

impl From<VelocitySequence> for Vec<Token> {
    fn from(s: VelocitySequence) -> Vec<Token> {
        s.tokens
    }
}

impl fmt::Display for VelocitySequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Macro-step indices at which a trace is sampled.
pub fn sample_steps(cfg: &SimConfig) -> impl Iterator<Item = usize> {
    let stride = cfg.sample_stride;
    (0..MAX_STEPS).map(move |k| k * stride)
}

pub fn extract_sequence(
    trace: &SimTrace,
    vocab: &DirectionVocabulary,
    cfg: &SimConfig,
) -> Result<VelocitySequence> {
    if !trace.converged || trace.states.is_empty() {
        return Err(Error::NotConverged(cfg.max_macro_steps));
    }
    let last = trace.states.len() - 1;
    Ok(VelocitySequence::from_stream(sample_steps(cfg).map(|s| {
        quantize_velocity(trace.states[s.min(last)].velocity, vocab, cfg.stop_speed)
    })))
}

/// Per-step inverse-frequency weights `q_t(c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    q: Vec<[f64; NUM_CLASSES]>,
}

impl ClassWeights {
    /// All-ones weights.
    pub fn uniform(steps: usize) -> Self {
        Self {
            q: vec![[1.0; NUM_CLASSES]; steps],
        }
    }

    pub fn from_rows(q: Vec<[f64; NUM_CLASSES]>) -> Result<Self> {
        if q.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("class weights must be finite and positive".into()));
        }
        Ok(Self { q })
    }

    pub fn steps(&self) -> usize {
        self.q.len()
    }

    pub fn get(&self, step: usize, class: usize) -> f64 {
        self.q[step][class]
    }

    pub fn rows(&self) -> &[[f64; NUM_CLASSES]] {
        &self.q
    }
}

/// Unnormalized inverse frequencies `N / max(count_t(c), 1)` and the per-cell counts.
pub fn raw_inverse_frequencies(
    sequences: &[VelocitySequence],
    steps: usize,
) -> Result<(Vec<[f64; NUM_CLASSES]>, Vec<[usize; NUM_CLASSES]>)> {
    if sequences.is_empty() {
        return Err(Error::Empty("class_weights needs at least one sequence"));
    }
    let mut counts = vec![[0usize; NUM_CLASSES]; steps];
    for s in sequences {
        for (t, tok) in s.padded(steps).into_iter().enumerate() {
            counts[t][tok.index()] += 1;
        }
    }
    let n = sequences.len() as f64;
    let raw = counts
        .iter()
        .map(|row| {
            let mut q = [0.0; NUM_CLASSES];
            for (c, &k) in row.iter().enumerate() {
                q[c] = (n / k.max(1) as f64).min(n);
            }
            q
        })
        .collect();
    Ok((raw, counts))
}

pub fn class_weights(sequences: &[VelocitySequence], steps: usize) -> Result<ClassWeights> {
    let (mut q, counts) = raw_inverse_frequencies(sequences, steps)?;
    let (sum, cells) = q
        .iter()
        .zip(&counts)
        .flat_map(|(qr, cr)| qr.iter().zip(cr.iter()))
        .filter(|(_, &k)| k > 0)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    let scale = cells as f64 / sum;
    for row in q.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    ClassWeights::from_rows(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::BodyState;

    fn seq(ix: &[usize]) -> VelocitySequence {
        VelocitySequence::new(ix.iter().map(|&i| Token::new(i).unwrap()).collect()).unwrap()
    }

    #[test]
    fn vocabulary_anchors() {
        let v = build_vocabulary();
        assert_eq!(v.direction(0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(v.direction(16), Vec3::new(0.0, 0.0, -1.0));
        for d in v.directions() {
            assert!((d.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn quantize_basics() {
        let v = build_vocabulary();
        assert_eq!(quantize_velocity(Vec3::ZERO, &v, 0.05), Token::STOP);
        assert_eq!(quantize_velocity(Vec3::new(1.0, 0.0, -1.0), &v, 0.05).index(), 8);
        assert_eq!(quantize_velocity(Vec3::new(0.049, 0.0, 0.0), &v, 0.05), Token::STOP);
        assert_eq!(quantize_velocity(Vec3::new(0.05, 0.0, 0.0), &v, 0.05).index(), 0);
    }

    #[test]
    fn upward_velocity_maps_to_horizontal() {
        let v = build_vocabulary();
        assert_eq!(quantize_velocity(Vec3::new(0.0, 1.0, 0.3), &v, 0.05).index(), 2);
    }

    #[test]
    fn sequence_validation() {
        assert!(VelocitySequence::new(vec![]).is_err());
        assert!(VelocitySequence::new(vec![Token::STOP, Token::STOP]).is_err());
        assert!(VelocitySequence::new(vec![Token::new(3).unwrap()]).is_err());
        assert!(VelocitySequence::new(vec![Token::new(3).unwrap(); 6]).is_ok());
        assert!(VelocitySequence::new(vec![Token::new(3).unwrap(); 7]).is_err());
        assert_eq!(seq(&[0, 17]).to_string(), "d0 stop");
    }

    #[test]
    fn token_parse_round_trip() {
        for i in 0..NUM_CLASSES {
            let t = Token::new(i).unwrap();
            assert_eq!(t.to_string().parse::<Token>().unwrap(), t);
        }
        assert!("d17".parse::<Token>().is_err());
    }

    fn trace(velocities: &[Vec3], converged: bool) -> SimTrace {
        SimTrace {
            target_id: 0,
            states: velocities
                .iter()
                .map(|&v| BodyState {
                    position: Vec3::ZERO,
                    velocity: v,
                })
                .collect(),
            stable_step: converged.then(|| velocities.len() - 1),
            converged,
        }
    }

    #[test]
    fn motionless_trace_is_stop() {
        let cfg = SimConfig::default();
        let s = extract_sequence(&trace(&[Vec3::ZERO], true), &build_vocabulary(), &cfg).unwrap();
        assert_eq!(s, VelocitySequence::stop());
    }

    #[test]
    fn extraction_samples_every_stride() {
        let cfg = SimConfig::default();
        let mut v = vec![Vec3::new(1.0, 0.0, 0.0); 6];
        v.extend(vec![Vec3::new(0.0, 1.0, 0.0); 6]);
        v.push(Vec3::ZERO);
        let s = extract_sequence(&trace(&v, true), &build_vocabulary(), &cfg).unwrap();
        assert_eq!(s, seq(&[0, 2, 17]));
    }

    #[test]
    fn non_converged_trace_rejected() {
        let cfg = SimConfig::default();
        let v = vec![Vec3::new(1.0, 0.0, 0.0); 33];
        assert!(matches!(
            extract_sequence(&trace(&v, false), &build_vocabulary(), &cfg),
            Err(Error::NotConverged(_))
        ));
    }

    #[test]
    fn weights_all_stop() {
        let w = class_weights(&vec![VelocitySequence::stop(); 10], MAX_STEPS).unwrap();
        for t in 0..MAX_STEPS {
            assert_eq!(w.get(t, STOP_INDEX), 1.0);
        }
    }

    #[test]
    fn weights_symmetric_classes() {
        let data = vec![seq(&[0, 17]), seq(&[4, 17]), seq(&[0, 17]), seq(&[4, 17])];
        let w = class_weights(&data, MAX_STEPS).unwrap();
        assert_eq!(w.get(0, 0), w.get(0, 4));
    }

    #[test]
    fn weights_inverse_frequency_ratio() {
        let mut data = vec![seq(&[1, 17]); 90];
        data.extend(vec![seq(&[5, 17]); 10]);
        let (raw, _) = raw_inverse_frequencies(&data, MAX_STEPS).unwrap();
        assert!((raw[0][5] / raw[0][1] - 9.0).abs() < 1e-12);
        let w = class_weights(&data, MAX_STEPS).unwrap();
        assert!((w.get(0, 5) / w.get(0, 1) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn weights_empty_is_error() {
        assert!(class_weights(&[], MAX_STEPS).is_err());
    }
}
