//! Double-sided two-way ranging between a gate (initiator) and a mobile
//! device (responder).
//!
//! Each device timestamps on its own affine clock. The four intervals of a
//! RIM → RRM → RFM exchange are combined with the asymmetric DS-TWR formula,
//! which cancels both clock offsets and, to first order, clock drift.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in metres per nanosecond.
pub const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.299_792_458;

/// Largest clock frequency error accepted by [`ClockModel::new`].
pub const MAX_DRIFT_PPM: f64 = 100.0;

#[derive(Debug, Error)]
pub enum RangingError {
    #[error("invalid timestamps: interval sum {0} ns is not positive")]
    InvalidTimestamps(f64),
    #[error("clock drift {0} ppm outside ±{MAX_DRIFT_PPM} ppm")]
    DriftOutOfRange(f64),
    #[error("invalid ranging parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RangingError>;

/// Affine device clock: `local = offset + true · (1 + drift_ppm·10⁻⁶)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub drift_ppm: f64,
    /// Local reading at true time zero, in ns.
    pub offset: f64,
}

impl ClockModel {
    pub fn new(drift_ppm: f64, offset: f64) -> Result<Self> {
        if !drift_ppm.is_finite() || drift_ppm.abs() > MAX_DRIFT_PPM {
            return Err(RangingError::DriftOutOfRange(drift_ppm));
        }
        if !offset.is_finite() {
            return Err(RangingError::InvalidParameter(format!("clock offset {offset}")));
        }
        Ok(Self { drift_ppm, offset })
    }

    /// An ideal clock.
    pub fn perfect() -> Self {
        Self::default()
    }

    pub fn rate(&self) -> f64 {
        1.0 + self.drift_ppm * 1e-6
    }

    pub fn local_time(&self, true_ns: f64) -> f64 {
        self.offset + true_ns * self.rate()
    }

    /// True duration that this clock measures as `local_ns`.
    pub fn true_duration(&self, local_ns: f64) -> f64 {
        local_ns / self.rate()
    }
}

/// The four DS-TWR intervals, each measured on its owner's clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangingTimestamps {
    pub t_round1: f64,
    pub t_reply1: f64,
    pub t_round2: f64,
    pub t_reply2: f64,
}

impl RangingTimestamps {
    pub fn new(t_round1: f64, t_reply1: f64, t_round2: f64, t_reply2: f64) -> Self {
        Self {
            t_round1,
            t_reply1,
            t_round2,
            t_reply2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangingResult {
    pub session_index: u64,
    pub timestamp_ms: f64,
    /// Clamped to be non-negative; the unclamped value is recoverable from
    /// the session's [`RangingTimestamps`].
    pub tof_ns: f64,
    pub distance_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    RIM,
    RRM,
    RFM,
}

/// One frame of the exchange. `tx_local_time` is on the sender's clock and
/// `rx_local_time` on the receiver's.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangingMessage {
    pub kind: MessageKind,
    pub tx_local_time: f64,
    pub rx_local_time: f64,
}

/// Output of [`run_session`].
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub result: RangingResult,
    pub timestamps: RangingTimestamps,
    pub trace: [RangingMessage; 3],
}

/// Time of flight from the four intervals:
/// `(Tr1·Tr2 − Trp1·Trp2) / (Tr1 + Tr2 + Trp1 + Trp2)`.
///
/// The result can be slightly negative when stamps are noisy.
pub fn compute_tof(ts: &RangingTimestamps) -> Result<f64> {
    let denom = ts.t_round1 + ts.t_round2 + ts.t_reply1 + ts.t_reply2;
    if !(denom > 0.0) {
        return Err(RangingError::InvalidTimestamps(denom));
    }
    // The two products nearly cancel; recover the rounding error of the
    // second one so the difference is accurate to a few ulps.
    let p = ts.t_reply1 * ts.t_reply2;
    let p_err = ts.t_reply1.mul_add(ts.t_reply2, -p);
    let num = ts.t_round1.mul_add(ts.t_round2, -p) - p_err;
    Ok(num / denom)
}

pub fn distance_from_tof(tof_ns: f64) -> f64 {
    tof_ns * SPEED_OF_LIGHT_M_PER_NS
}

/// Per-session knobs shared by [`run_session`] and [`ranging_stream`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangingParams {
    pub initiator_clock: ClockModel,
    pub responder_clock: ClockModel,
    /// Responder's reply delay (RIM rx → RRM tx), in its local ns.
    pub reply1_ns: f64,
    /// Initiator's reply delay (RRM rx → RFM tx), in its local ns.
    pub reply2_ns: f64,
    /// Standard deviation of Gaussian noise on every timestamp, ns.
    pub stamp_noise_ns: f64,
    /// Radio configuration carried as metadata only.
    pub channel: u8,
    pub preamble_length: u32,
}

impl Default for RangingParams {
    fn default() -> Self {
        Self {
            initiator_clock: ClockModel::perfect(),
            responder_clock: ClockModel::perfect(),
            reply1_ns: 1e6,
            reply2_ns: 1e6,
            stamp_noise_ns: 0.0,
            channel: 5,
            preamble_length: 128,
        }
    }
}

impl RangingParams {
    pub fn validate(&self) -> Result<()> {
        ClockModel::new(self.initiator_clock.drift_ppm, self.initiator_clock.offset)?;
        ClockModel::new(self.responder_clock.drift_ppm, self.responder_clock.offset)?;
        if !(self.reply1_ns > 0.0 && self.reply2_ns > 0.0) {
            return Err(RangingError::InvalidParameter("reply delays must be positive".into()));
        }
        if !(self.stamp_noise_ns >= 0.0) {
            return Err(RangingError::InvalidParameter("stamp noise must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Simulates one noiseless exchange starting at true time zero.
pub fn run_session(
    distance_m: f64,
    initiator_clock: ClockModel,
    responder_clock: ClockModel,
    reply_delays_ns: (f64, f64),
) -> Result<Session> {
    let params = RangingParams {
        initiator_clock,
        responder_clock,
        reply1_ns: reply_delays_ns.0,
        reply2_ns: reply_delays_ns.1,
        ..RangingParams::default()
    };
    run_session_at(distance_m, 0.0, 0, &params, &mut NoNoise)
}

/// Source of timestamp noise; lets the noiseless path skip RNG plumbing.
pub trait StampNoise {
    fn sample(&mut self) -> f64;
}

struct NoNoise;

impl StampNoise for NoNoise {
    fn sample(&mut self) -> f64 {
        0.0
    }
}

struct GaussianNoise<'a, R: ?Sized> {
    dist: Normal<f64>,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> StampNoise for GaussianNoise<'_, R> {
    fn sample(&mut self) -> f64 {
        self.dist.sample(self.rng)
    }
}

/// Simulates one exchange whose RIM leaves the initiator at `start_ns`
/// (true time). `timestamp_ms` of the result is `start_ns` in ms.
pub fn run_session_at<N: StampNoise + ?Sized>(
    distance_m: f64,
    start_ns: f64,
    session_index: u64,
    params: &RangingParams,
    noise: &mut N,
) -> Result<Session> {
    if !(distance_m >= 0.0) || !distance_m.is_finite() {
        return Err(RangingError::InvalidParameter(format!("distance {distance_m} m")));
    }
    params.validate()?;
    let (ci, cr) = (params.initiator_clock, params.responder_clock);
    let flight = distance_m / SPEED_OF_LIGHT_M_PER_NS;

    // True event times.
    let reply1 = cr.true_duration(params.reply1_ns);
    let reply2 = ci.true_duration(params.reply2_ns);
    let t0 = start_ns;
    let t1 = t0 + flight;
    let t2 = t1 + reply1;
    let t3 = t2 + flight;
    let t4 = t3 + reply2;
    let t5 = t4 + flight;

    let n: [f64; 6] = std::array::from_fn(|_| noise.sample());
    let rim = RangingMessage {
        kind: MessageKind::RIM,
        tx_local_time: ci.local_time(t0) + n[0],
        rx_local_time: cr.local_time(t1) + n[1],
    };
    let rrm = RangingMessage {
        kind: MessageKind::RRM,
        tx_local_time: cr.local_time(t2) + n[2],
        rx_local_time: ci.local_time(t3) + n[3],
    };
    let rfm = RangingMessage {
        kind: MessageKind::RFM,
        tx_local_time: ci.local_time(t4) + n[4],
        rx_local_time: cr.local_time(t5) + n[5],
    };

    // Intervals come from durations rather than from differences of the
    // absolute stamps, which carry the clock offsets and lose precision.
    let timestamps = RangingTimestamps {
        t_round1: ci.rate() * (2.0 * flight + reply1) + (n[3] - n[0]),
        t_reply1: params.reply1_ns + (n[2] - n[1]),
        t_round2: cr.rate() * (2.0 * flight + reply2) + (n[5] - n[2]),
        t_reply2: params.reply2_ns + (n[4] - n[3]),
    };
    let tof = compute_tof(&timestamps)?.max(0.0);
    Ok(Session {
        result: RangingResult {
            session_index,
            timestamp_ms: start_ns * 1e-6,
            tof_ns: tof,
            distance_m: distance_from_tof(tof),
        },
        timestamps,
        trace: [rim, rrm, rfm],
    })
}

/// Straight-line approach towards the gate, stopping at zero distance.
pub fn approach(start_distance_m: f64, speed_mps: f64) -> impl Fn(f64) -> f64 {
    move |t_ms| (start_distance_m - speed_mps * t_ms * 1e-3).max(0.0)
}

/// One session per `cadence_ms` tick over `(0, duration_ms]`, ranging to
/// `walk(t_ms)` at each tick.
pub fn ranging_stream<R: Rng + ?Sized>(
    cadence_ms: f64,
    duration_ms: f64,
    walk: impl Fn(f64) -> f64,
    params: &RangingParams,
    rng: &mut R,
) -> Result<Vec<RangingResult>> {
    if !(cadence_ms > 0.0) {
        return Err(RangingError::InvalidParameter(format!("cadence {cadence_ms} ms")));
    }
    let ticks = (duration_ms / cadence_ms + 1e-9).floor() as u64;
    let mut out = Vec::with_capacity(ticks as usize);
    let mut ranger = Ranger::new(*params)?;
    for k in 1..=ticks {
        let t_ms = k as f64 * cadence_ms;
        out.push(ranger.range(walk(t_ms), t_ms, rng)?);
    }
    Ok(out)
}

/// Stateful session counter used by the streaming pipeline.
#[derive(Clone, Debug)]
pub struct Ranger {
    params: RangingParams,
    next_index: u64,
}

impl Ranger {
    pub fn new(params: RangingParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, next_index: 0 })
    }

    pub fn range<R: Rng + ?Sized>(&mut self, distance_m: f64, t_ms: f64, rng: &mut R) -> Result<RangingResult> {
        let index = self.next_index;
        self.next_index += 1;
        let session = if self.params.stamp_noise_ns > 0.0 {
            let dist = Normal::new(0.0, self.params.stamp_noise_ns)
                .map_err(|e| RangingError::InvalidParameter(e.to_string()))?;
            run_session_at(distance_m, t_ms * 1e6, index, &self.params, &mut GaussianNoise { dist, rng })?
        } else {
            run_session_at(distance_m, t_ms * 1e6, index, &self.params, &mut NoNoise)?
        };
        Ok(session.result)
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(results: &[RangingResult], mut out: W) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tof_examples() {
        let cases = [
            ((2020.0, 2000.0, 2020.0, 2000.0), 10.0),
            ((1020.0, 1000.0, 3020.0, 3000.0), 10.0),
            ((1000.0, 1000.0, 1000.0, 1000.0), 0.0),
        ];
        for ((r1, p1, r2, p2), want) in cases {
            let got = compute_tof(&RangingTimestamps::new(r1, p1, r2, p2)).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn non_positive_denominator_is_rejected() {
        let ts = RangingTimestamps::new(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(compute_tof(&ts), Err(RangingError::InvalidTimestamps(_))));
    }

    #[test]
    fn three_metre_session() {
        let s = run_session(3.0, ClockModel::perfect(), ClockModel::perfect(), (1e6, 1e6)).unwrap();
        let want = 3.0 / 0.299792458;
        assert!((s.result.tof_ns - want).abs() < 1e-9);
        assert!((want - 10.0069).abs() < 1e-4);
        let zero = run_session(0.0, ClockModel::perfect(), ClockModel::perfect(), (1e6, 1e6)).unwrap();
        assert_eq!(zero.result.tof_ns, 0.0);
    }

    #[test]
    fn drifted_session_is_sub_millimetre() {
        let ci = ClockModel::new(20.0, 123.0).unwrap();
        let cr = ClockModel::new(-20.0, -4567.0).unwrap();
        let s = run_session(3.0, ci, cr, (1e6, 1e6)).unwrap();
        assert!((s.result.distance_m - 3.0).abs() < 1e-3);
    }

    #[test]
    fn trace_order() {
        let s = run_session(5.0, ClockModel::perfect(), ClockModel::perfect(), (2e5, 3e5)).unwrap();
        let kinds: Vec<_> = s.trace.iter().map(|m| m.kind).collect();
        assert_eq!(kinds, [MessageKind::RIM, MessageKind::RRM, MessageKind::RFM]);
    }

    #[test]
    fn clock_rejects_large_drift() {
        assert!(ClockModel::new(101.0, 0.0).is_err());
        assert!(ClockModel::new(-100.0, 0.0).is_ok());
    }

    #[test]
    fn stream_counts_and_monotone_walk() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = RangingParams::default();
        let s = ranging_stream(200.0, 4000.0, approach(4.0, 1.0), &p, &mut rng).unwrap();
        assert_eq!(s.len(), 20);
        for w in s.windows(2) {
            assert!(w[1].distance_m <= w[0].distance_m + 1e-6);
        }
        let flat = ranging_stream(200.0, 4000.0, |_| 2.0, &p, &mut rng).unwrap();
        assert!(flat.iter().all(|r| (r.distance_m - 2.0).abs() < 1e-3));
        assert!(ranging_stream(0.0, 4000.0, |_| 2.0, &p, &mut rng).is_err());
    }

    #[test]
    fn noisy_stream_is_seeded() {
        let p = RangingParams {
            stamp_noise_ns: 0.1,
            ..RangingParams::default()
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ranging_stream(200.0, 2000.0, |_| 3.0, &p, &mut rng).unwrap()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn jsonl_fields() {
        let r = RangingResult {
            session_index: 2,
            timestamp_ms: 400.0,
            tof_ns: 10.0,
            distance_m: 2.99792458,
        };
        let mut buf = Vec::new();
        write_jsonl(&[r, r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["session_index", "timestamp_ms", "tof_ns", "distance_m"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
