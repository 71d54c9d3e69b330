//! Configuration-driven experiment commands. Each command writes its files
//! into an output directory together with a `manifest.json` of checksums and
//! a snapshot of the resolved configuration.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{g2_pattern, theta_phi_from_field, visibilities_from_theta, SlitQubitState};
use crate::biphoton::BiphotonState;
use crate::config::{ExperimentConfig, SweepRoute};
use crate::detector::{pixelate_jpd, AcquisitionParams, FrameSynthesizer};
use crate::error::{Error, Result};
use crate::estimator::{accumulate, JpdAccumulator};
use crate::fit::{complementarity, fit_fringes, two_photon_visibility, FitResult, Measured};
use crate::grid::Axis;
use crate::io::{self, BpfsHeader, BpfsReader, BpfsWriter, Provenance};
use crate::profile::{anticorrelation, correlation, marginal, FringeProfile, Jpd2D, ProfileKind};
use crate::propagation::{apply_double_slit, detector_jpd, momentum_to_slit_plane, propagate_to_detector};

/// Frames generated per parallel batch when streaming to disk or to an accumulator.
const FRAME_BATCH: usize = 2048;

/// Files written by one command, relative to `dir`.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: String) -> PathBuf {
        let p = self.dir.join(&name);
        self.files.push(name);
        p
    }

    fn finish(self, command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        let mut me = self;
        let snapshot = me.path("config.toml".into());
        std::fs::write(&snapshot, cfg.to_toml()).map_err(|e| Error::io(&snapshot, e))?;
        io::write_manifest(&me.dir, command, &cfg.provenance(), &me.files)?;
        me.files.push("manifest.json".into());
        Ok(me)
    }
}

fn tag(n: f64) -> String {
    format!("N{n:07.3}")
}

/// Analytic visibilities over `theta` and sampled coincidence patterns.
pub fn cmd_analytic(cfg: &ExperimentConfig, out: &Path) -> Result<Outputs> {
    let mut o = Outputs::new(out)?;
    let prov = cfg.provenance();
    let a = &cfg.analytic;
    let phi = cfg.pump.phi;
    let rows = (0..a.theta_steps).map(|i| {
        let theta = FRAC_PI_2 * i as f64 / (a.theta_steps - 1) as f64;
        let v = visibilities_from_theta(theta, phi);
        vec![theta, phi, v.v_minus, v.v_plus, v.v_m, v.v_12, v.complementarity()]
    });
    io::write_csv(
        &o.path("visibilities.csv".into()),
        &prov.lines(),
        &["theta", "phi", "v_minus", "v_plus", "v_m", "v_12", "v_m2_plus_v_12_2"],
        rows,
    )?;
    let k = 2.0 * std::f64::consts::PI / cfg.optics.signal_wavelength;
    let axis = Axis::new(a.g2_n, a.g2_extent / a.g2_n as f64);
    let x = axis.coords();
    for theta in &a.g2_thetas {
        let state = SlitQubitState::new(*theta, phi)?;
        let mut rows = Vec::with_capacity(a.g2_n * a.g2_n);
        for &x1 in &x {
            for &x2 in &x {
                rows.push(vec![x1, x2, g2_pattern(x1, x2, &state, k, cfg.slits.separation, cfg.optics.f)?]);
            }
        }
        io::write_csv(
            &o.path(format!("g2_theta{theta:.6}.csv")),
            &prov.lines(),
            &["x1_m", "x2_m", "value"],
            rows,
        )?;
    }
    o.finish("analytic", cfg)
}

/// Noiseless detector distribution for one state plus its slit-qubit projection.
#[derive(Debug, Clone)]
pub struct SimulatedPoint {
    pub state: BiphotonState,
    pub jpd: Jpd2D,
    pub qubit: SlitQubitState,
}

pub fn simulate_point(cfg: &ExperimentConfig, state: &BiphotonState) -> Result<SimulatedPoint> {
    let grids = cfg.pipeline_grids()?;
    let train = cfg.train();
    let slits = cfg.slit_params();
    let field = momentum_to_slit_plane(state, &grids.slit, &train).map_err(|e| e.in_stage("slit plane"))?;
    let qubit = theta_phi_from_field(&field, &slits).map_err(|e| e.in_stage("qubit projection"))?;
    let masked = apply_double_slit(&field, &slits)?;
    let det = propagate_to_detector(&masked, &train, &slits, &grids.detector).map_err(|e| e.in_stage("propagation"))?;
    let jpd = detector_jpd(&det)?;
    Ok(SimulatedPoint {
        state: *state,
        jpd,
        qubit,
    })
}

/// Single-photon, difference-coordinate and sum-coordinate profiles.
#[derive(Debug, Clone)]
pub struct ProfileSet {
    pub marginal: FringeProfile,
    pub correlation: FringeProfile,
    pub anticorrelation: FringeProfile,
}

pub fn noiseless_profiles(jpd: &Jpd2D) -> ProfileSet {
    ProfileSet {
        marginal: marginal(jpd),
        correlation: correlation(jpd),
        anticorrelation: anticorrelation(jpd),
    }
}

/// Streams synthetic frames for a ground-truth distribution straight into
/// an accumulator.
pub fn simulate_acquisition(jpd: &Jpd2D, acq: AcquisitionParams) -> Result<JpdAccumulator> {
    let pixels = pixelate_jpd(jpd, acq.nx, acq.pixel_pitch)?;
    let synth = FrameSynthesizer::new(&pixels, acq)?;
    Ok(accumulate(acq.nx, acq.ny, acq.pixel_pitch, acq.frames, FRAME_BATCH, |m, buf| {
        synth.fill_frame(m, buf)
    }))
}

/// Profiles for fitting; the two-photon ones come from the coincidence
/// matrix with its shot-noise diagonal interpolated away.
pub fn estimated_profiles(acc: &JpdAccumulator) -> Result<ProfileSet> {
    let jpd = acc.jpd_2d()?.diagonal_interpolated();
    Ok(ProfileSet {
        marginal: acc.marginal_profile()?,
        correlation: correlation(&jpd),
        anticorrelation: anticorrelation(&jpd),
    })
}

/// Fits one profile, centering it first when configured.
pub fn fit_profile(cfg: &ExperimentConfig, profile: &FringeProfile) -> Result<FitResult> {
    let p = if cfg.fit.center { profile.centered() } else { profile.clone() };
    fit_fringes(&p, &cfg.geometry(), &cfg.tolerances())
}

#[derive(Debug, Clone)]
pub struct PointFits {
    pub marginal: FitResult,
    pub correlation: FitResult,
    pub anticorrelation: FitResult,
}

pub fn fit_profiles(cfg: &ExperimentConfig, set: &ProfileSet) -> Result<PointFits> {
    Ok(PointFits {
        marginal: fit_profile(cfg, &set.marginal).map_err(|e| e.in_stage("marginal fit"))?,
        correlation: fit_profile(cfg, &set.correlation).map_err(|e| e.in_stage("correlation fit"))?,
        anticorrelation: fit_profile(cfg, &set.anticorrelation).map_err(|e| e.in_stage("anticorrelation fit"))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    I,
    II,
    III,
}

impl Regime {
    pub fn classify(v_m: f64, low: f64, high: f64) -> Self {
        if v_m > high {
            Regime::I
        } else if v_m < low {
            Regime::III
        } else {
            Regime::II
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::I => "I",
            Regime::II => "II",
            Regime::III => "III",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub w0: f64,
    pub n: f64,
    pub k: f64,
    pub v_m: Measured,
    pub v_minus: Measured,
    pub v_plus: Measured,
    pub v_12: Measured,
    pub complementarity: Measured,
    pub regime: Regime,
    /// Slit-qubit mixing angle and phase from the pre-aperture field.
    pub theta: f64,
    pub phi: f64,
    pub converged: bool,
}

pub fn sweep_record(cfg: &ExperimentConfig, state: &BiphotonState, qubit: &SlitQubitState, fits: &PointFits) -> Result<SweepRecord> {
    let v12 = two_photon_visibility(&fits.correlation, &fits.anticorrelation)?;
    let comp = complementarity(&fits.marginal, v12)?;
    let m = |f: &FitResult| Measured {
        value: f.params.visibility,
        sigma: f.sigma[1],
    };
    let stats = state.stats();
    Ok(SweepRecord {
        w0: state.w0(),
        n: stats.n,
        k: stats.k,
        v_m: m(&fits.marginal),
        v_minus: m(&fits.correlation),
        v_plus: m(&fits.anticorrelation),
        v_12: v12,
        complementarity: comp,
        regime: Regime::classify(fits.marginal.params.visibility, cfg.sweep.regime_low, cfg.sweep.regime_high),
        theta: qubit.theta,
        phi: qubit.phi,
        converged: fits.marginal.converged && fits.correlation.converged && fits.anticorrelation.converged,
    })
}

/// Seed for sweep point `index`, distinct per point and reproducible.
pub fn point_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Full pipeline for one waist along the configured route.
pub fn sweep_point(cfg: &ExperimentConfig, index: usize, state: &BiphotonState) -> Result<(SweepRecord, PointFits)> {
    let w0 = state.w0();
    let wrap = |stage: &str, e: Error| e.in_stage(&format!("{stage}, w0 = {w0:.4e} m"));
    let sim = simulate_point(cfg, state).map_err(|e| wrap("simulate", e))?;
    let set = match cfg.sweep.route {
        SweepRoute::Noiseless => noiseless_profiles(&sim.jpd),
        SweepRoute::MonteCarlo => {
            let acq = AcquisitionParams {
                seed: point_seed(cfg.acquisition.seed, index),
                ..cfg.acquisition_params()
            };
            let acc = simulate_acquisition(&sim.jpd, acq).map_err(|e| wrap("frames", e))?;
            estimated_profiles(&acc).map_err(|e| wrap("estimate", e))?
        }
    };
    let fits = fit_profiles(cfg, &set).map_err(|e| wrap("fit", e))?;
    let rec = sweep_record(cfg, state, &sim.qubit, &fits).map_err(|e| wrap("complementarity", e))?;
    Ok((rec, fits))
}

fn write_profiles(o: &mut Outputs, prov: &Provenance, stem: &str, set: &ProfileSet) -> Result<()> {
    for p in [&set.marginal, &set.correlation, &set.anticorrelation] {
        io::write_profile(&o.path(format!("{}_{stem}.csv", p.kind.as_str())), prov, p)?;
    }
    Ok(())
}

/// Noiseless detector distributions for every configured waist.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Outputs> {
    let mut o = Outputs::new(out)?;
    let prov = cfg.provenance();
    let states = cfg.states()?;
    let acq = cfg.acquisition_params();
    let mut summary = Vec::new();
    for state in &states {
        let n = state.birth_zone_number();
        info!("simulating N = {n:.3}");
        let sim = simulate_point(cfg, state)?;
        let stem = tag(n);
        if cfg.output.wants("bpf2") {
            io::write_bpf2_jpd(&o.path(format!("jpd_{stem}.bpf2")), &sim.jpd)?;
        }
        if cfg.output.wants("csv") {
            let pixels = pixelate_jpd(&sim.jpd, acq.nx, acq.pixel_pitch)?;
            io::write_jpd_csv(&o.path(format!("pixel_jpd_{stem}.csv")), &prov, &pixels)?;
            write_profiles(&mut o, &prov, &stem, &noiseless_profiles(&sim.jpd))?;
        }
        let v = sim.qubit.visibilities();
        let stats = state.stats();
        summary.push(vec![state.w0(), stats.n, stats.k, sim.qubit.theta, sim.qubit.phi, v.v_m, v.v_12]);
    }
    io::write_csv(
        &o.path("simulate.csv".into()),
        &prov.lines(),
        &["w0_m", "n", "k", "theta", "phi", "v_m_qubit", "v_12_qubit"],
        summary,
    )?;
    o.finish("simulate", cfg)
}

/// Streams one synthetic frame stack per configured waist to `BPFS` files.
pub fn cmd_frames(cfg: &ExperimentConfig, out: &Path) -> Result<Outputs> {
    let mut o = Outputs::new(out)?;
    let prov = cfg.provenance();
    for (index, state) in cfg.states()?.iter().enumerate() {
        let stem = tag(state.birth_zone_number());
        let sim = simulate_point(cfg, state)?;
        let acq = AcquisitionParams {
            seed: point_seed(cfg.acquisition.seed, index),
            ..cfg.acquisition_params()
        };
        let pixels = pixelate_jpd(&sim.jpd, acq.nx, acq.pixel_pitch)?;
        io::write_jpd_csv(&o.path(format!("pixel_jpd_{stem}.csv")), &prov, &pixels)?;
        let synth = FrameSynthesizer::new(&pixels, acq)?;
        let mut w = BpfsWriter::create(
            &o.path(format!("frames_{stem}.bpfs")),
            BpfsHeader {
                frames: acq.frames as u32,
                ny: acq.ny as u32,
                nx: acq.nx as u32,
                pixel_pitch: acq.pixel_pitch,
                seed: acq.seed,
            },
        )?;
        let len = acq.frame_len();
        let mut batch = vec![0u16; FRAME_BATCH * len];
        for start in (0..acq.frames).step_by(FRAME_BATCH) {
            let count = FRAME_BATCH.min(acq.frames - start);
            batch[..count * len]
                .par_chunks_mut(len)
                .enumerate()
                .for_each(|(i, f)| synth.fill_frame(start + i, f));
            batch[..count * len].chunks_exact(len).try_for_each(|f| w.write_frame(f))?;
        }
        w.finish()?;
        info!("wrote {} frames for N = {:.3}", acq.frames, state.birth_zone_number());
    }
    o.finish("frames", cfg)
}

/// Coincidence matrix and fringe profiles estimated from a `BPFS` stack.
pub fn cmd_estimate(cfg: &ExperimentConfig, stack: &Path, out: &Path) -> Result<Outputs> {
    let mut o = Outputs::new(out)?;
    let prov = cfg.provenance();
    let mut r = BpfsReader::open(stack)?;
    let h = r.header;
    let mut acc = JpdAccumulator::new(h.nx as usize, h.ny as usize, h.pixel_pitch);
    let mut buf = vec![0u16; h.frame_len()];
    while r.next_frame(&mut buf)? {
        acc.ingest(&buf);
    }
    let jpd = acc.jpd_2d()?;
    io::write_jpd_csv(&o.path("jpd2d.csv".into()), &prov, &jpd)?;
    if cfg.output.wants("bpf2") {
        io::write_bpf2_jpd(&o.path("jpd2d.bpf2".into()), &jpd)?;
    }
    let set = estimated_profiles(&acc)?;
    for p in [&set.marginal, &set.correlation, &set.anticorrelation, &acc.intensity_profile()?] {
        io::write_profile(&o.path(format!("{}.csv", p.kind.as_str())), &prov, p)?;
    }
    o.finish("estimate", cfg)
}

/// Stored fit: the source profile kind and the fit itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub kind: ProfileKind,
    pub source: String,
    pub config_sha256: String,
    pub fit: FitResult,
}

pub fn cmd_fit(cfg: &ExperimentConfig, profile_path: &Path, out: &Path) -> Result<Outputs> {
    let mut o = Outputs::new(out)?;
    let profile = io::read_profile(profile_path)?;
    let fit = fit_profile(cfg, &profile)?;
    if !fit.converged {
        warn!("fit of {} did not converge", profile_path.display());
    }
    let stem = profile_path.file_stem().and_then(|s| s.to_str()).unwrap_or("profile");
    let record = FitRecord {
        kind: profile.kind,
        source: profile_path.file_name().and_then(|s| s.to_str()).unwrap_or("").to_string(),
        config_sha256: cfg.hash(),
        fit,
    };
    io::write_json(&o.path(format!("fit_{stem}.json")), &record)?;
    o.finish("fit", cfg)
}

/// Sweep summary beyond the per-point table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub records: Vec<SweepRecord>,
    /// `V_m` never rises by more than the combined one-sigma fit error.
    pub monotone: bool,
    /// Birth-zone number where `V_m` crosses one half, interpolated linearly.
    pub half_crossing: Option<f64>,
}

pub fn half_crossing(records: &[SweepRecord]) -> Option<f64> {
    records.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        (a.v_m.value >= 0.5 && b.v_m.value < 0.5)
            .then(|| a.n + (a.v_m.value - 0.5) / (a.v_m.value - b.v_m.value) * (b.n - a.n))
    })
}

pub fn is_monotone(records: &[SweepRecord]) -> bool {
    records
        .windows(2)
        .all(|w| w[1].v_m.value <= w[0].v_m.value + w[0].v_m.sigma.hypot(w[1].v_m.sigma))
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<(SweepSummary, Vec<PointFits>)> {
    let states = cfg.states()?;
    let ns: Vec<f64> = states.iter().map(|s| s.birth_zone_number()).collect();
    let lo = ns.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ns.iter().copied().fold(0.0, f64::max);
    if states.len() < 4 || lo > 2.0 || hi < 30.0 {
        return Err(Error::config(
            "pump.birth_zone_list",
            format!("a sweep needs at least 4 waists spanning N <= 2 to N >= 30; got {} spanning {lo:.2}..{hi:.2}", states.len()),
        ));
    }
    let results: Vec<(SweepRecord, PointFits)> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| sweep_point(cfg, i, s))
        .collect::<Result<_>>()?;
    let (records, fits): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let monotone = is_monotone(&records);
    if !monotone {
        warn!("marginal visibility rises with N beyond its fit uncertainty");
    }
    let half = half_crossing(&records);
    Ok((
        SweepSummary {
            records,
            monotone,
            half_crossing: half,
        },
        fits,
    ))
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Outputs> {
    let mut o = Outputs::new(out)?;
    let prov = cfg.provenance();
    let (summary, fits) = run_sweep(cfg)?;
    let mut meta = prov.lines();
    meta.push(format!("route {}", match cfg.sweep.route {
        SweepRoute::Noiseless => "noiseless",
        SweepRoute::MonteCarlo => "monte_carlo",
    }));
    meta.push(format!("regime_thresholds {} {}", cfg.sweep.regime_low, cfg.sweep.regime_high));
    let rows = summary.records.iter().map(|r| {
        vec![
            r.w0,
            r.n,
            r.k,
            r.v_m.value,
            r.v_m.sigma,
            r.v_minus.value,
            r.v_plus.value,
            r.v_12.value,
            r.v_12.sigma,
            r.complementarity.value,
            r.complementarity.sigma,
            match r.regime {
                Regime::I => 1.0,
                Regime::II => 2.0,
                Regime::III => 3.0,
            },
            r.theta,
            r.phi,
        ]
    });
    io::write_csv(
        &o.path("sweep.csv".into()),
        &meta,
        &[
            "w0_m", "n", "k", "v_m", "v_m_sigma", "v_minus", "v_plus", "v_12", "v_12_sigma", "sum", "sum_sigma",
            "regime", "theta", "phi",
        ],
        rows,
    )?;
    let circle = summary.records.iter().map(|r| vec![r.v_m.value, r.v_12.value]);
    io::write_csv(&o.path("circle.csv".into()), &prov.lines(), &["v_m", "v_12"], circle)?;
    for (r, f) in summary.records.iter().zip(&fits) {
        let stem = tag(r.n);
        for (kind, fit) in [
            (ProfileKind::Marginal, &f.marginal),
            (ProfileKind::Correlation, &f.correlation),
            (ProfileKind::AntiCorrelation, &f.anticorrelation),
        ] {
            let record = FitRecord {
                kind,
                source: format!("{}_{stem}", kind.as_str()),
                config_sha256: prov.config_hash.clone(),
                fit: fit.clone(),
            };
            io::write_json(&o.path(format!("fit_{}_{stem}.json", kind.as_str())), &record)?;
        }
    }
    io::write_json(&o.path("sweep_summary.json".into()), &summary)?;
    o.finish("sweep", cfg)
}
