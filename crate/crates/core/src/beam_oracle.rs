//! Ground-truth beamforming physics: ULA steering vectors, an
//! oversampled DFT codebook, exhaustive-search optimal beams, and
//! SNR / spectral-efficiency accounting.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Uniform linear array: element count and spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArrayGeometry {
    pub n_antennas: usize,
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn new(n_antennas: usize, spacing: f64) -> Result<Self> {
        if n_antennas < 1 {
            return Err(Error::Domain("array needs at least one antenna".into()));
        }
        if !(spacing > 0.0) {
            return Err(Error::Domain(format!("antenna spacing must be positive, got {spacing}")));
        }
        Ok(ArrayGeometry { n_antennas, spacing })
    }

    /// Half-wavelength spacing.
    pub fn half_wavelength(n_antennas: usize) -> Result<Self> {
        Self::new(n_antennas, 0.5)
    }
}

/// Fixed grid of precoding vectors, uniform in spatial frequency.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub vectors: Vec<Vec<Complex64>>,
    pub spatial_frequencies: Vec<f64>,
    pub power_budget: f64,
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.vectors.len()
    }
}

/// One channel realization plus the noise floor it is observed under.
#[derive(Debug, Clone)]
pub struct ChannelSnapshot {
    pub h: Vec<Complex64>,
    pub noise_power: f64,
}

/// Array response for a plane wave from `angle` (radians off
/// broadside): element n is exp(i·2π·spacing·n·sin angle).
pub fn steering_vector(angle: f64, geometry: ArrayGeometry) -> Result<Vec<Complex64>> {
    if !(angle.abs() <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "steering angle {angle} outside [-pi/2, pi/2]"
        )));
    }
    let phase_step = 2.0 * std::f64::consts::PI * geometry.spacing * angle.sin();
    Ok((0..geometry.n_antennas)
        .map(|n| Complex64::from_polar(1.0, phase_step * n as f64))
        .collect())
}

/// `size` vectors at spatial frequencies ω_c = −π + (2c+1)π/C with
/// entries √(P/N)·exp(i·ω_c·n), so every vector carries exactly the
/// power budget.
pub fn build_codebook(geometry: ArrayGeometry, size: usize, power_budget: f64) -> Result<Codebook> {
    if size < 1 {
        return Err(Error::Domain("codebook size must be at least 1".into()));
    }
    if !(power_budget > 0.0) {
        return Err(Error::Domain(format!("power budget must be positive, got {power_budget}")));
    }
    let n = geometry.n_antennas;
    let amp = (power_budget / n as f64).sqrt();
    let mut vectors = Vec::with_capacity(size);
    let mut spatial_frequencies = Vec::with_capacity(size);
    for c in 0..size {
        let omega = -std::f64::consts::PI
            + (2 * c + 1) as f64 * std::f64::consts::PI / size as f64;
        spatial_frequencies.push(omega);
        vectors.push((0..n).map(|i| Complex64::from_polar(amp, omega * i as f64)).collect());
    }
    Ok(Codebook { vectors, spatial_frequencies, power_budget })
}

/// Beamforming gain |hᴴ v|².
fn gain(h: &[Complex64], v: &[Complex64]) -> f64 {
    let inner: Complex64 = h.iter().zip(v).map(|(hi, vi)| hi.conj() * vi).sum();
    inner.norm_sqr()
}

/// Exhaustive search for the codebook index maximizing |hᴴ v_c|²,
/// ties broken toward the lowest index.
pub fn optimal_beam(channel: &ChannelSnapshot, codebook: &Codebook) -> Result<usize> {
    if codebook.vectors.is_empty() {
        return Err(Error::Usage("optimal_beam on an empty codebook".into()));
    }
    let mut best = 0usize;
    let mut best_gain = f64::NEG_INFINITY;
    for (c, v) in codebook.vectors.iter().enumerate() {
        if v.len() != channel.h.len() {
            return Err(Error::Usage(format!(
                "channel has {} elements but codebook vector {c} has {}",
                channel.h.len(),
                v.len()
            )));
        }
        let g = gain(&channel.h, v);
        if g > best_gain {
            best_gain = g;
            best = c;
        }
    }
    Ok(best)
}

/// Per-slot SNR |h[τ]ᴴ v_{b[τ]}|²/σ² and the summed spectral
/// efficiency Σ log₂(1 + SNR).
pub fn snr_and_rate(
    channels: &[ChannelSnapshot],
    beams: &[usize],
    codebook: &Codebook,
) -> Result<(Vec<f64>, f64)> {
    if channels.len() != beams.len() {
        return Err(Error::Usage(format!(
            "{} channels but {} beam indices",
            channels.len(),
            beams.len()
        )));
    }
    let mut snrs = Vec::with_capacity(channels.len());
    for (ch, &b) in channels.iter().zip(beams) {
        let v = codebook
            .vectors
            .get(b)
            .ok_or_else(|| Error::Usage(format!("beam index {b} outside codebook")))?;
        snrs.push(gain(&ch.h, v) / ch.noise_power);
    }
    let rate = snrs.iter().map(|s| (1.0 + s).log2()).sum();
    Ok((snrs, rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn broadside_steering_is_all_ones() {
        let g = ArrayGeometry::half_wavelength(4).unwrap();
        let v = steering_vector(0.0, g).unwrap();
        for e in v {
            assert!((e - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn endfire_steering_alternates_sign() {
        let g = ArrayGeometry::half_wavelength(2).unwrap();
        let v = steering_vector(PI / 2.0, g).unwrap();
        assert!((v[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((v[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn thirty_degree_phases() {
        let g = ArrayGeometry::half_wavelength(3).unwrap();
        let v = steering_vector(PI / 6.0, g).unwrap();
        let phases: Vec<f64> = v.iter().map(|e| e.arg()).collect();
        assert!(phases[0].abs() < 1e-12);
        assert!((phases[1] - PI / 2.0).abs() < 1e-12);
        // element 2 sits at phase pi, which arg() may report as -pi
        assert!((phases[2].abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn steering_rejects_out_of_range_angles() {
        let g = ArrayGeometry::half_wavelength(4).unwrap();
        assert!(steering_vector(1.8, g).is_err());
        assert!(steering_vector(f64::NAN, g).is_err());
    }

    #[test]
    fn codebook_vectors_carry_the_power_budget() {
        let g = ArrayGeometry::half_wavelength(16).unwrap();
        let cb = build_codebook(g, 64, 1.0).unwrap();
        assert_eq!(cb.size(), 64);
        for v in &cb.vectors {
            let p: f64 = v.iter().map(|e| e.norm_sqr()).sum();
            assert!((p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_codebook_is_the_square_root_of_power() {
        let g = ArrayGeometry::half_wavelength(1).unwrap();
        let cb = build_codebook(g, 1, 4.0).unwrap();
        assert_eq!(cb.size(), 1);
        assert!((cb.vectors[0][0] - Complex64::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn two_beam_codebook_matches_hand_evaluation() {
        let g = ArrayGeometry::half_wavelength(2).unwrap();
        let cb = build_codebook(g, 2, 1.0).unwrap();
        assert!((cb.spatial_frequencies[0] + PI / 2.0).abs() < 1e-12);
        assert!((cb.spatial_frequencies[1] - PI / 2.0).abs() < 1e-12);
        let r = 1.0 / 2.0f64.sqrt();
        // frequency -pi/2: second entry e^{-i pi/2} = -i (scaled)
        assert!((cb.vectors[0][1] - Complex64::new(0.0, -r)).norm() < 1e-12);
        assert!((cb.vectors[1][1] - Complex64::new(0.0, r)).norm() < 1e-12);
    }

    #[test]
    fn frequencies_strictly_increase() {
        let g = ArrayGeometry::half_wavelength(8).unwrap();
        let cb = build_codebook(g, 32, 1.0).unwrap();
        for w in cb.spatial_frequencies.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(cb.spatial_frequencies[0] >= -PI);
        assert!(*cb.spatial_frequencies.last().unwrap() < PI);
    }

    #[test]
    fn channel_aligned_with_a_codebook_vector_selects_it() {
        let g = ArrayGeometry::half_wavelength(16).unwrap();
        let cb = build_codebook(g, 64, 1.0).unwrap();
        let h: Vec<Complex64> = cb.vectors[5].iter().map(|v| v * 3.5).collect();
        let snap = ChannelSnapshot { h, noise_power: 1.0 };
        assert_eq!(optimal_beam(&snap, &cb).unwrap(), 5);
    }

    #[test]
    fn optimal_beam_invariant_under_channel_scaling() {
        let g = ArrayGeometry::half_wavelength(8).unwrap();
        let cb = build_codebook(g, 32, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let h: Vec<Complex64> = (0..8)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let base = optimal_beam(&ChannelSnapshot { h: h.clone(), noise_power: 1.0 }, &cb)
                .unwrap();
            let scale = Complex64::new(-2.3, 1.7);
            let scaled: Vec<Complex64> = h.iter().map(|x| x * scale).collect();
            let same =
                optimal_beam(&ChannelSnapshot { h: scaled, noise_power: 1.0 }, &cb).unwrap();
            assert_eq!(base, same);
        }
    }

    #[test]
    fn los_channel_between_grid_points_picks_the_nearer_beam() {
        let g = ArrayGeometry::half_wavelength(16).unwrap();
        let cb = build_codebook(g, 64, 1.0).unwrap();
        // 30% of the way from beam 9's frequency to beam 10's
        let w9 = cb.spatial_frequencies[9];
        let w10 = cb.spatial_frequencies[10];
        let target = w9 + 0.3 * (w10 - w9);
        // spatial frequency omega = 2*pi*spacing*sin(theta) = pi*sin(theta)
        let angle = (target / PI).asin();
        let h = steering_vector(angle, g).unwrap();
        assert_eq!(optimal_beam(&ChannelSnapshot { h, noise_power: 1.0 }, &cb).unwrap(), 9);
    }

    #[test]
    fn grid_angle_channel_selects_its_own_beam() {
        let g = ArrayGeometry::half_wavelength(16).unwrap();
        let cb = build_codebook(g, 64, 1.0).unwrap();
        let angle = (cb.spatial_frequencies[17] / PI).asin();
        let h = steering_vector(angle, g).unwrap();
        assert_eq!(optimal_beam(&ChannelSnapshot { h, noise_power: 1.0 }, &cb).unwrap(), 17);
    }

    #[test]
    fn snr_and_rate_scalar_case() {
        let cb = Codebook {
            vectors: vec![vec![Complex64::new(2.0, 0.0)]],
            spatial_frequencies: vec![0.0],
            power_budget: 4.0,
        };
        let ch = ChannelSnapshot { h: vec![Complex64::new(1.0, 0.0)], noise_power: 4.0 };
        let (snr, rate) = snr_and_rate(&[ch], &[0], &cb).unwrap();
        assert!((snr[0] - 1.0).abs() < 1e-12);
        assert!((rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_channel_contributes_nothing() {
        let cb = Codebook {
            vectors: vec![vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]],
            spatial_frequencies: vec![0.0],
            power_budget: 2.0,
        };
        let ch = ChannelSnapshot {
            h: vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            noise_power: 1.0,
        };
        let (snr, rate) = snr_and_rate(&[ch], &[0], &cb).unwrap();
        assert!(snr[0].abs() < 1e-12);
        assert!(rate.abs() < 1e-12);
    }

    #[test]
    fn rate_sums_logs_across_slots() {
        // craft channels with SNR exactly 1 and 3 under sigma^2 = 1
        let cb = Codebook {
            vectors: vec![vec![Complex64::new(1.0, 0.0)]],
            spatial_frequencies: vec![0.0],
            power_budget: 1.0,
        };
        let chans = vec![
            ChannelSnapshot { h: vec![Complex64::new(1.0, 0.0)], noise_power: 1.0 },
            ChannelSnapshot { h: vec![Complex64::new(3.0f64.sqrt(), 0.0)], noise_power: 1.0 },
        ];
        let (snr, rate) = snr_and_rate(&chans, &[0, 0], &cb).unwrap();
        assert!((snr[0] - 1.0).abs() < 1e-12);
        assert!((snr[1] - 3.0).abs() < 1e-12);
        assert!((rate - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_usage_errors() {
        let g = ArrayGeometry::half_wavelength(2).unwrap();
        let cb = build_codebook(g, 2, 1.0).unwrap();
        let ch = ChannelSnapshot {
            h: vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            noise_power: 1.0,
        };
        assert!(snr_and_rate(&[ch], &[0, 1], &cb).is_err());
    }
}
