//! Project configuration.
//!
//! A TOML document with one table per pipeline stage. Every key has a
//! default, unknown keys are rejected, and `--set section.key=value`
//! overrides are applied to the parsed document before it is typed.

use std::path::Path;

use rollwave::bloch::{SpectrumOptions, Window};
use rollwave::orbit::{Closure, ContinuationOptions};
use rollwave::simulate::{BumpShape, MetastabilityOptions, ProbeOptions, RateOptions};
use rollwave::ModelParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub model: ModelSection,
    pub closure: ClosureSection,
    pub family: FamilySection,
    pub spectrum: SpectrumSection,
    pub whitham: WhithamSection,
    pub evans: EvansSection,
    pub simulate: SimulateSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub froude: f64,
    pub nu: f64,
    pub r: f64,
    pub s: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::roll_wave_default();
        Self { froude: p.froude, nu: p.nu, r: p.r, s: p.s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClosureRule {
    /// `q = u₋ + c τ₋`.
    EndState,
    FixedQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosureSection {
    pub rule: ClosureRule,
    pub u_minus: f64,
    /// Used only by the `fixed-q` rule.
    pub q: f64,
}

impl Default for ClosureSection {
    fn default() -> Self {
        Self { rule: ClosureRule::EndState, u_minus: 0.96, q: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySection {
    pub target_period: f64,
    /// Periods solved exactly and stored in the cache.
    pub periods: Vec<f64>,
    /// Crest offset of the first orbit above the Hopf equilibrium.
    pub hopf_amplitude: f64,
    pub segments: usize,
    pub grid: usize,
    pub tol: f64,
    pub ds_initial: f64,
    pub ds_min: f64,
    pub ds_max: f64,
}

impl Default for FamilySection {
    fn default() -> Self {
        let c = ContinuationOptions::default();
        Self {
            target_period: c.target_period,
            periods: vec![4.5, 5.3, 6.2, 20.6, 25.0],
            hopf_amplitude: 1e-3,
            segments: 30,
            grid: c.grid,
            tol: c.tol,
            ds_initial: c.ds_initial,
            ds_min: c.ds_min,
            ds_max: c.ds_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub n_modes: usize,
    pub xi_points: usize,
    pub convergence_stride: usize,
    pub cauchy_tol: f64,
    pub tol_stab: f64,
    pub origin_ball: f64,
    pub fit_range: f64,
    pub zero_radius: f64,
    pub kernel_tol: f64,
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        let o = SpectrumOptions::default();
        Self {
            n_modes: o.n_modes,
            xi_points: o.xi_points,
            convergence_stride: 10,
            cauchy_tol: o.cauchy_tol,
            tol_stab: o.tol_stab,
            origin_ball: o.origin_ball,
            fit_range: o.fit_range,
            zero_radius: o.zero_radius,
            kernel_tol: o.kernel_tol,
            re_min: o.window.re_min,
            re_max: o.window.re_max,
            im_max: o.window.im_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhithamSection {
    /// Finite-difference step relative to `max(|c_E|, 1)`.
    pub relative_step: f64,
    /// Also compute the Hill spectrum and compare against its critical curves.
    pub tangency: bool,
}

impl Default for WhithamSection {
    fn default() -> Self {
        Self { relative_step: rollwave::whitham::DEFAULT_RELATIVE_STEP, tangency: true }
    }
}

/// A ray `t ↦ (t λ₀, e^{t ν₀})` for the leading-order ratio, given as
/// `[re λ₀, im λ₀, re ν₀, im ν₀]`.
pub type Ray = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvansSection {
    pub re_min: f64,
    pub re_max: f64,
    pub re_points: usize,
    pub im_min: f64,
    pub im_max: f64,
    pub im_points: usize,
    /// Number of equally spaced Floquet multipliers `σ = e^{iθ}`.
    pub phases: usize,
    pub rays: Vec<Ray>,
    pub ratio_scales: usize,
}

impl Default for EvansSection {
    fn default() -> Self {
        Self {
            re_min: -0.05,
            re_max: 0.05,
            re_points: 5,
            im_min: -0.5,
            im_max: 0.5,
            im_points: 11,
            phases: 4,
            rays: vec![[1.0, 0.0, 0.0, 1.0], [0.3, 0.5, 1.0, 0.2]],
            ratio_scales: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    Probe,
    Metastability,
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub mode: SimMode,
    pub probe: ProbeSection,
    pub metastability: MetastabilitySection,
    pub rate: RateSection,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            mode: SimMode::Probe,
            probe: ProbeSection::default(),
            metastability: MetastabilitySection::default(),
            rate: RateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub epsilon: f64,
    pub horizon: f64,
    pub copies: usize,
    pub cells_per_period: usize,
    pub output_interval: f64,
    pub width: f64,
    pub shape: BumpShape,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let o = ProbeOptions::default();
        Self {
            epsilon: o.epsilon,
            horizon: o.horizon,
            copies: o.copies,
            cells_per_period: o.cells_per_period,
            output_interval: o.output_interval,
            width: o.width,
            shape: o.shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetastabilitySection {
    pub cells_per_period: usize,
    pub amplitude: f64,
    /// 0 means one pulse width.
    pub width: f64,
    /// 0 means 2% of the width.
    pub edge: f64,
    /// 0 means the wrap-around cutoff.
    pub end_time: f64,
    pub output_interval: f64,
    pub snapshot_times: Vec<f64>,
}

impl Default for MetastabilitySection {
    fn default() -> Self {
        let o = MetastabilityOptions::default();
        Self {
            cells_per_period: o.cells_per_period,
            amplitude: o.amplitude,
            width: 0.0,
            edge: 0.0,
            end_time: 0.0,
            output_interval: o.output_interval,
            snapshot_times: vec![0.0, 5.0, 10.0, 15.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    /// Floquet exponent at which the leading mode is seeded.
    pub xi: f64,
    pub epsilon: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub cells_per_period: usize,
    pub n_modes: usize,
    pub output_interval: f64,
}

impl Default for RateSection {
    fn default() -> Self {
        let o = RateOptions::default();
        Self {
            xi: 0.28,
            epsilon: o.epsilon,
            t_start: o.t_start,
            t_end: o.t_end,
            cells_per_period: o.cells_per_period,
            n_modes: o.n_modes,
            output_interval: o.output_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// Parses a `--set` value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad key `{key}` in override")));
    }
    let mut table = doc;
    for part in &path[..path.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ProjectConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ProjectConfig =
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        let positive = [
            ("family.tol", self.family.tol),
            ("family.hopf_amplitude", self.family.hopf_amplitude),
            ("family.target_period", self.family.target_period),
            ("family.ds_initial", self.family.ds_initial),
            ("family.ds_min", self.family.ds_min),
            ("family.ds_max", self.family.ds_max),
            ("spectrum.cauchy_tol", self.spectrum.cauchy_tol),
            ("spectrum.tol_stab", self.spectrum.tol_stab),
            ("spectrum.origin_ball", self.spectrum.origin_ball),
            ("spectrum.fit_range", self.spectrum.fit_range),
            ("spectrum.zero_radius", self.spectrum.zero_radius),
            ("spectrum.kernel_tol", self.spectrum.kernel_tol),
            ("whitham.relative_step", self.whitham.relative_step),
            ("simulate.probe.epsilon", self.simulate.probe.epsilon),
            ("simulate.probe.horizon", self.simulate.probe.horizon),
            ("simulate.probe.width", self.simulate.probe.width),
            ("simulate.probe.output_interval", self.simulate.probe.output_interval),
            ("simulate.metastability.output_interval", self.simulate.metastability.output_interval),
            ("simulate.rate.epsilon", self.simulate.rate.epsilon),
            ("simulate.rate.output_interval", self.simulate.rate.output_interval),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("`{key}` must be positive, got {v}")));
            }
        }
        if self.closure.u_minus <= 0.0 || self.closure.q <= 0.0 {
            return Err(CliError::Config("`closure.u_minus` and `closure.q` must be positive".into()));
        }
        if self.spectrum.n_modes == 0 || self.spectrum.xi_points == 0 || self.family.grid < 8 || self.family.segments == 0 {
            return Err(CliError::Config("grid sizes must be positive".into()));
        }
        if self.evans.re_points == 0 || self.evans.im_points == 0 || self.evans.phases == 0 {
            return Err(CliError::Config("`evans` grid sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        let m = &self.model;
        ModelParams::new(m.froude, m.nu, m.r, m.s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn closure(&self) -> Closure {
        match self.closure.rule {
            ClosureRule::EndState => Closure::EndState { u_minus: self.closure.u_minus },
            ClosureRule::FixedQ => Closure::FixedQ(self.closure.q),
        }
    }

    pub fn continuation(&self) -> ContinuationOptions {
        let f = &self.family;
        ContinuationOptions {
            target_period: f.target_period,
            requested_periods: f.periods.clone(),
            ds_initial: f.ds_initial,
            ds_min: f.ds_min,
            ds_max: f.ds_max,
            grid: f.grid,
            tol: f.tol,
            ..ContinuationOptions::default()
        }
    }

    pub fn spectrum_options(&self) -> SpectrumOptions {
        let s = &self.spectrum;
        SpectrumOptions {
            n_modes: s.n_modes,
            xi_points: s.xi_points,
            window: Window { re_min: s.re_min, re_max: s.re_max, im_max: s.im_max },
            convergence_stride: s.convergence_stride,
            cauchy_tol: s.cauchy_tol,
            tol_stab: s.tol_stab,
            origin_ball: s.origin_ball,
            fit_range: s.fit_range,
            zero_radius: s.zero_radius,
            kernel_tol: s.kernel_tol,
        }
    }

    pub fn probe_options(&self) -> ProbeOptions {
        let p = &self.simulate.probe;
        ProbeOptions {
            epsilon: p.epsilon,
            horizon: p.horizon,
            copies: p.copies,
            cells_per_period: p.cells_per_period,
            output_interval: p.output_interval,
            width: p.width,
            shape: p.shape,
        }
    }

    pub fn metastability_options(&self) -> MetastabilityOptions {
        let m = &self.simulate.metastability;
        let opt = |v: f64| (v > 0.0).then_some(v);
        MetastabilityOptions {
            cells_per_period: m.cells_per_period,
            amplitude: m.amplitude,
            width: opt(m.width),
            edge: opt(m.edge),
            end_time: opt(m.end_time),
            output_interval: m.output_interval,
            snapshot_times: m.snapshot_times.clone(),
        }
    }

    pub fn rate_options(&self) -> RateOptions {
        let r = &self.simulate.rate;
        RateOptions {
            epsilon: r.epsilon,
            t_start: r.t_start,
            t_end: r.t_end,
            cells_per_period: r.cells_per_period,
            n_modes: r.n_modes,
            output_interval: r.output_interval,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ProjectConfig::from_toml("", &[]).unwrap(), ProjectConfig::default());
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = ProjectConfig::from_toml(
            "[model]\nfroude = 5.0\n",
            &["spectrum.n_modes=32".into(), "closure.rule=fixed-q".into(), "family.periods=[6.2]".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.froude, 5.0);
        assert_eq!(cfg.spectrum.n_modes, 32);
        assert_eq!(cfg.closure.rule, ClosureRule::FixedQ);
        assert_eq!(cfg.family.periods, vec![6.2]);
    }

    #[test]
    fn unknown_keys_name_the_key() {
        let err = ProjectConfig::from_toml("[model]\nfroud = 5.0\n", &[]).unwrap_err();
        assert!(err.to_string().contains("froud"), "{err}");
        let err = ProjectConfig::from_toml("", &["spectrum.nmodes=3".into()]).unwrap_err();
        assert!(err.to_string().contains("nmodes"), "{err}");
    }

    #[test]
    fn nonpositive_tolerance_is_rejected() {
        let err = ProjectConfig::from_toml("", &["spectrum.cauchy_tol=0".into()]).unwrap_err();
        assert!(err.to_string().contains("cauchy_tol"));
    }
}
