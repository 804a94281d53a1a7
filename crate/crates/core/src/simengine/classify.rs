use super::{CoiGroup, SimConfig, SimResult, Verdict};
use crate::netcase::GenUnit;

/// Largest `|delta_i - reference|` over all grouped machines. The reference
/// is the island's infinite bus angle, or its inertia-weighted centre.
pub fn relative_angle_deviation(groups: &[CoiGroup], gens: &[GenUnit], deltas: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for g in groups {
        let reference = g.infinite_angle.unwrap_or_else(|| {
            let m: f64 = g.gens.iter().map(|&i| gens[i].h).sum();
            g.gens.iter().map(|&i| gens[i].h * deltas[i]).sum::<f64>() / m
        });
        for &i in &g.gens {
            worst = worst.max((deltas[i] - reference).abs());
        }
    }
    worst
}

/// Unstable when the relative rotor angle exceeds the limit at any point
/// after clearing, when a monitored bus voltage is below `v_recover`
/// anywhere in the final `t_settle` window, or when the run diverged.
pub fn classify_stability(r: &SimResult, config: &SimConfig) -> Verdict {
    if r.diverged_at.is_some() {
        return Verdict::Unstable;
    }
    let angle_trip = r
        .t
        .iter()
        .zip(&r.max_rel_dev)
        .any(|(&t, &d)| t > r.t_clear && d > config.angle_limit);
    if angle_trip {
        return Verdict::Unstable;
    }
    let Some(&t_last) = r.t.last() else {
        return Verdict::Stable;
    };
    // Tolerance absorbs grid rounding at the window edge.
    let window = t_last - config.t_settle - 1e-9;
    for &b in &r.monitored {
        let low = r
            .t
            .iter()
            .zip(&r.vm[b])
            .any(|(&t, &v)| t >= window && v < config.v_recover);
        if low {
            return Verdict::Unstable;
        }
    }
    Verdict::Stable
}
