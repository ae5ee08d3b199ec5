//! Polychromatic acquisition effects.
//!
//! A discrete X-ray spectrum turns the per-material line integrals into
//! expected detector counts (beam hardening), Poisson statistics corrupt the
//! counts, and a log transform maps them back to an effective line-integral
//! projection. A lighter path adds Poisson/Gaussian counting noise to clean
//! (monochromatic) projections. All randomness comes from counter-based
//! per-pixel streams keyed on `(seed, i, j, k)`, so results are reproducible
//! under any parallel schedule.

use ndarray::Zip;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainTag, ProjectionStack};
use crate::projector::ProjectionSet;

/// Discrete X-ray spectrum with per-material attenuation tables.
///
/// Only the ratios `m(E) / m(E0)` enter the physics, so the absolute scale of
/// the attenuation tables is irrelevant. Intensities are relative; the
/// absolute photon budget is supplied separately as `i0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub e0_kev: f64,
    pub energies_kev: Vec<f64>,
    pub intensity: Vec<f64>,
    pub m_water: Vec<f64>,
    pub m_bone: Vec<f64>,
    pub m_implant: Vec<f64>,
}

/// Attenuation ratios `m(E)/m(E0)` and integration weights `I(E)·ΔE` for
/// every bin of a validated spectrum.
#[derive(Debug, Clone)]
pub struct PreparedSpectrum {
    pub water: Vec<f64>,
    pub bone: Vec<f64>,
    pub implant: Vec<f64>,
    pub weights: Vec<f64>,
    pub total_weight: f64,
}

const TOY_SPECTRUM_JSON: &str = include_str!("../data/toy_spectrum.json");

impl Spectrum {
    /// A single bin at the reference energy: every ratio is one, the total
    /// weight is one, and beam hardening collapses to `i0·exp(-p)`.
    pub fn monochromatic(e0_kev: f64) -> Spectrum {
        Spectrum {
            e0_kev,
            energies_kev: vec![e0_kev],
            intensity: vec![1.0],
            m_water: vec![1.0],
            m_bone: vec![1.0],
            m_implant: vec![1.0],
        }
    }

    /// The bundled 20-bin toy spectrum (40–100 keV, titanium-like implant).
    pub fn builtin_toy() -> Spectrum {
        serde_json::from_str(TOY_SPECTRUM_JSON).expect("bundled spectrum parses")
    }

    pub fn from_file(path: &std::path::Path) -> Result<Spectrum> {
        let text = std::fs::read_to_string(path)?;
        let s: Spectrum = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.energies_kev.len();
        if n == 0 {
            return Err(Error::Config("spectrum has no energy bins".into()));
        }
        for (name, list) in [
            ("intensity", &self.intensity),
            ("m_water", &self.m_water),
            ("m_bone", &self.m_bone),
            ("m_implant", &self.m_implant),
        ] {
            if list.len() != n {
                return Err(Error::Config(format!(
                    "spectrum field {name} has {} entries, expected {n}",
                    list.len()
                )));
            }
        }
        if self.energies_kev.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("spectrum energies must be strictly increasing".into()));
        }
        let all = self
            .energies_kev
            .iter()
            .chain(&self.intensity)
            .chain(&self.m_water)
            .chain(&self.m_bone)
            .chain(&self.m_implant);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("spectrum contains non-finite values".into()));
        }
        if self.intensity.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("spectrum intensities must be non-negative".into()));
        }
        for (name, list) in
            [("m_water", &self.m_water), ("m_bone", &self.m_bone), ("m_implant", &self.m_implant)]
        {
            if list.iter().any(|&v| v <= 0.0) {
                return Err(Error::Config(format!("{name} attenuation values must be positive")));
            }
        }
        if n > 1 && !(self.e0_kev >= self.energies_kev[0] && self.e0_kev <= self.energies_kev[n - 1])
        {
            return Err(Error::Config(format!(
                "reference energy {} keV lies outside the tabulated range",
                self.e0_kev
            )));
        }
        if !(self.total_weight() > 0.0) {
            return Err(Error::Config("spectrum has zero total intensity".into()));
        }
        Ok(())
    }

    /// Trapezoidal integration width of each bin (1 for a single bin).
    pub fn bin_widths(&self) -> Vec<f64> {
        let e = &self.energies_kev;
        let n = e.len();
        if n == 1 {
            return vec![1.0];
        }
        (0..n)
            .map(|j| {
                if j == 0 {
                    0.5 * (e[1] - e[0])
                } else if j == n - 1 {
                    0.5 * (e[n - 1] - e[n - 2])
                } else {
                    0.5 * (e[j + 1] - e[j - 1])
                }
            })
            .collect()
    }

    /// Σ I(E)·ΔE — the flat-field count scale per unit of `i0`.
    pub fn total_weight(&self) -> f64 {
        self.intensity.iter().zip(self.bin_widths()).map(|(i, w)| i * w).sum()
    }

    /// Linear interpolation of an attenuation table at the reference energy.
    fn table_at_e0(&self, table: &[f64]) -> f64 {
        let e = &self.energies_kev;
        if e.len() == 1 {
            return table[0];
        }
        let pos = e.partition_point(|&x| x < self.e0_kev).clamp(1, e.len() - 1);
        let (ea, eb) = (e[pos - 1], e[pos]);
        let f = (self.e0_kev - ea) / (eb - ea);
        table[pos - 1] + f * (table[pos] - table[pos - 1])
    }

    /// Validate and precompute ratios and weights.
    pub fn prepare(&self) -> Result<PreparedSpectrum> {
        self.validate()?;
        let ratios = |table: &[f64]| -> Vec<f64> {
            let at_e0 = self.table_at_e0(table);
            table.iter().map(|&m| m / at_e0).collect()
        };
        let weights: Vec<f64> =
            self.intensity.iter().zip(self.bin_widths()).map(|(i, w)| i * w).collect();
        Ok(PreparedSpectrum {
            water: ratios(&self.m_water),
            bone: ratios(&self.m_bone),
            implant: ratios(&self.m_implant),
            total_weight: weights.iter().sum(),
            weights,
        })
    }
}

/// Counting-noise parameters shared by the noise operators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Mean background events added to every pixel's expected count.
    pub r: f64,
    /// Incident photon budget: multiplies the relative spectrum intensities.
    pub i0: f64,
    /// Additive Gaussian noise on counts (clean-acquisition path only).
    pub gaussian_sigma: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("background rate must be >= 0, got {}", self.r)));
        }
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::Config(format!("photon budget i0 must be > 0, got {}", self.i0)));
        }
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "gaussian sigma must be >= 0, got {}",
                self.gaussian_sigma
            )));
        }
        Ok(())
    }
}

fn check_line_integral(p: &ProjectionStack, what: &str) -> Result<()> {
    if p.domain != DomainTag::LineIntegral {
        return Err(Error::ShapeMismatch(format!(
            "{what} expects a line-integral stack, got {:?}",
            p.domain
        )));
    }
    Ok(())
}

/// Expected polychromatic detector counts for a set of material projections:
/// `i0 · Σ_E I(E)·ΔE · exp(-(r_w(E)·p_w + r_b(E)·p_b + r_im(E)·p_im))`.
pub fn beam_harden(ps: &ProjectionSet, s: &Spectrum, i0: f64) -> Result<ProjectionStack> {
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::Config(format!("photon budget i0 must be > 0, got {i0}")));
    }
    let prep = s.prepare()?;
    check_line_integral(&ps.p_water, "beam_harden")?;
    check_line_integral(&ps.p_bone, "beam_harden")?;
    check_line_integral(&ps.p_implant, "beam_harden")?;
    if ps.p_water.dims() != ps.p_bone.dims() || ps.p_water.dims() != ps.p_implant.dims() {
        return Err(Error::ShapeMismatch("material projections have mismatched shapes".into()));
    }
    let mut out = ProjectionStack::zeros(ps.p_water.geometry.clone(), DomainTag::Count);
    Zip::from(&mut out.data)
        .and(&ps.p_water.data)
        .and(&ps.p_bone.data)
        .and(&ps.p_implant.data)
        .for_each(|c, &pw, &pb, &pim| {
            let mut sum = 0.0;
            for b in 0..prep.weights.len() {
                let expo = prep.water[b] * pw + prep.bone[b] * pb + prep.implant[b] * pim;
                sum += prep.weights[b] * (-expo).exp();
            }
            *c = i0 * sum;
        });
    Ok(out)
}

fn poisson_draw(mean: f64, rng: &mut impl rand::Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive finite Poisson mean").sample(rng)
}

/// Replace expected counts with a Poisson draw of mean `count + r`,
/// pixel-seeded for schedule-independent reproducibility.
pub fn poissonize(p_bh: &ProjectionStack, np: &NoiseParams) -> Result<ProjectionStack> {
    np.validate()?;
    if p_bh.domain != DomainTag::Count {
        return Err(Error::ShapeMismatch(format!(
            "poissonize expects a count stack, got {:?}",
            p_bh.domain
        )));
    }
    let mut out = ProjectionStack::zeros(p_bh.geometry.clone(), DomainTag::Count);
    Zip::indexed(&mut out.data).and(&p_bh.data).for_each(|(i, j, k), c, &mean| {
        let mut rng = crate::rng::stream(np.seed, i as u64, j as u64, k as u64);
        *c = poisson_draw(mean + np.r, &mut rng);
    });
    Ok(out)
}

/// Effective line integral from counts: `-ln(max(count, 1) / (i0·ΣI·ΔE))`.
/// The one-count floor keeps fully starved pixels finite.
pub fn log_normalize(counts: &ProjectionStack, s: &Spectrum, i0: f64) -> Result<ProjectionStack> {
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::Config(format!("photon budget i0 must be > 0, got {i0}")));
    }
    if counts.domain != DomainTag::Count {
        return Err(Error::ShapeMismatch(format!(
            "log_normalize expects a count stack, got {:?}",
            counts.domain
        )));
    }
    let flat_field = i0 * s.prepare()?.total_weight;
    let mut out = ProjectionStack::zeros(counts.geometry.clone(), DomainTag::LineIntegral);
    Zip::from(&mut out.data)
        .and(&counts.data)
        .for_each(|p, &c| *p = -(c.max(1.0) / flat_field).ln());
    Ok(out)
}

/// Counting noise for clean (monochromatic) projections: Poisson counts of
/// mean `i0·exp(-p)` plus Gaussian read-out noise, then the log transform.
pub fn acquisition_noise(p: &ProjectionStack, np: &NoiseParams) -> Result<ProjectionStack> {
    np.validate()?;
    check_line_integral(p, "acquisition_noise")?;
    let mut out = ProjectionStack::zeros(p.geometry.clone(), DomainTag::LineIntegral);
    Zip::indexed(&mut out.data).and(&p.data).for_each(|(i, j, k), q, &line| {
        let mut rng = crate::rng::stream(np.seed, i as u64, j as u64, k as u64);
        let mut c = poisson_draw(np.i0 * (-line).exp(), &mut rng);
        if np.gaussian_sigma > 0.0 {
            let normal = Normal::new(0.0, np.gaussian_sigma).expect("finite sigma");
            c += normal.sample(&mut rng);
        }
        *q = -(c.max(1.0) / np.i0).ln();
    });
    Ok(out)
}
