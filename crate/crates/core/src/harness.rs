//! Batch stages: quench, reconstruct, measure and figure tables.
//!
//! Each stage writes into its own directory under the output root together with
//! a `manifest.json` of SHA-256 digests; later stages verify those digests before
//! reading anything.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, EntanglementSpectrum, GapStatistics, ReferenceKind, StatisticsOptions};
use crate::config::RunConfig;
use crate::correlations::{self, CorrelationRecord, FourPointTensor};
use crate::error::{Error, Result};
use crate::fock::{self, StateVector};
use crate::io::{self, DensityRecord, Manifest, StateRecord};
use crate::linalg;
use crate::measurement;
use crate::model::{self, EvolutionMethod, InitialKind, InitialStateSpec, Propagator};
use crate::reconstruction::{self, ReconstructionRecord};

pub const QUENCH: &str = "quench";
pub const RECONSTRUCT: &str = "reconstruct";
pub const MEASURE: &str = "measure";
pub const FIGURES: &str = "figures";

/// Which figure tables to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

impl Figure {
    pub const ALL: [Figure; 3] = [Figure::Fig2, Figure::Fig3, Figure::Fig4];
}

/// One `(U, member, t)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub key: String,
    pub u_index: usize,
    pub member: usize,
    pub t_index: usize,
    pub u: f64,
    pub t: f64,
    pub tau: f64,
    pub seed: u64,
    pub initial: InitialStateSpec,
    pub max_c4: f64,
}

impl Snapshot {
    fn dir(&self, stage: &str) -> String {
        format!("{stage}/{}", self.key)
    }
}

fn key(u: usize, m: usize, t: usize) -> String {
    format!("u{u:02}-m{m:02}-t{t:02}")
}

/// Per-snapshot reconstruction diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub snapshot: Snapshot,
    pub theta_exact: f64,
    pub theta_recon: f64,
    pub infidelity_exact: f64,
    pub infidelity_recon: f64,
    pub residual_c2: f64,
    pub residual_c4: f64,
    pub max_rotated_c4: f64,
    pub ansatz_warning: bool,
    pub negativity: f64,
    pub spectral_levels: Vec<usize>,
    pub spectral_error_gauss: Vec<Option<f64>>,
    pub spectral_error_recon: Vec<Option<f64>>,
    pub sectors_exact: Vec<EntanglementSpectrum>,
    pub sectors_recon: Vec<EntanglementSpectrum>,
}

/// Configured runner bound to an output directory and a worker pool.
pub struct Harness {
    cfg: RunConfig,
    root: PathBuf,
    config_sha: String,
    pool: rayon::ThreadPool,
}

impl Harness {
    pub fn new(cfg: RunConfig, workers: Option<usize>) -> Result<Self> {
        cfg.validate()?;
        let text = cfg.to_toml()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.unwrap_or(0))
            .build()
            .map_err(|e| Error::domain(format!("worker pool: {e}")))?;
        Ok(Harness {
            root: cfg.output_dir.clone(),
            config_sha: io::sha256_hex(text.as_bytes()),
            cfg,
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_config(&self) -> Result<()> {
        io::atomic_write(&self.root.join("config.toml"), self.cfg.to_toml()?.as_bytes())
    }

    fn initial_state(&self, params: &model::HubbardParams, seed: u64) -> Result<(InitialStateSpec, StateVector)> {
        let n = self.cfg.particles();
        match self.cfg.ensemble.kind {
            InitialKind::Momentum => {
                let spec = model::select_initial_state(params, n, seed)?;
                let psi = model::plane_wave_state(params, &spec.bitstring()?)?;
                Ok((spec, psi))
            }
            InitialKind::Position => {
                let spec = model::select_position_state(params, n, self.cfg.ensemble.t0, seed)?;
                let psi = model::prepare_position_quench(
                    params,
                    &spec,
                    self.cfg.subsystem_sites,
                    self.cfg.reconstruction.evolution_tol,
                )?;
                Ok((spec, psi))
            }
        }
    }

    /// Evolve every ensemble member under every `U` and store states and correlations.
    pub fn quench(&self) -> Result<Manifest> {
        self.write_config()?;
        let cfg = &self.cfg;
        let na = cfg.subsystem_modes();
        let tol = cfg.reconstruction.evolution_tol;
        let jobs: Vec<(usize, usize)> = (0..cfg.interactions.len())
            .flat_map(|u| (0..cfg.ensemble.count).map(move |m| (u, m)))
            .collect();
        type Written = (Snapshot, Vec<(String, String)>);
        let results: Vec<Vec<Written>> = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(ui, m)| {
                    let u = cfg.interactions[ui];
                    let params = cfg.model.params(u);
                    let seed = cfg.ensemble.member_seed(m);
                    let (spec, psi0) = self.initial_state(&params, seed)?;
                    let h = model::build_in_basis(&params, psi0.basis().clone())?;
                    let prop = Propagator::new(&h, tol, EvolutionMethod::Auto)?;
                    cfg.times
                        .iter()
                        .enumerate()
                        .map(|(ti, &t)| {
                            let psi = prop.evolve(&psi0, t)?;
                            let c2 = correlations::measure_two_point(&psi, na)?;
                            let c4 = correlations::measure_four_point_connected(&psi, na)?;
                            let rho = fock::partial_trace(&psi, na)?;
                            let snap = Snapshot {
                                key: key(ui, m, ti),
                                u_index: ui,
                                member: m,
                                t_index: ti,
                                u,
                                t,
                                tau: u * t,
                                seed,
                                initial: spec.clone(),
                                max_c4: c4.max_abs(),
                            };
                            let dir = snap.dir(QUENCH);
                            let mut files = Vec::new();
                            for (name, value) in [
                                ("state.json", serde_json::to_value(StateRecord::new(&psi))?),
                                ("correlations.json", serde_json::to_value(CorrelationRecord::new(&c2, &c4)?)?),
                                ("rho_exact.json", serde_json::to_value(DensityRecord::new(&rho))?),
                            ] {
                                let rel = format!("{dir}/{name}");
                                files.push((rel.clone(), io::write_json(&self.root.join(&rel), &value)?));
                            }
                            Ok((snap, files))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut manifest = Manifest::new(QUENCH, &self.config_sha);
        let mut index = Vec::new();
        for (snap, files) in results.into_iter().flatten() {
            manifest.files.extend(files);
            index.push(snap);
        }
        let rel = format!("{QUENCH}/index.json");
        manifest.files.insert(rel.clone(), io::write_json(&self.root.join(&rel), &index)?);
        manifest.write(&self.root)?;
        log::info!("quench: {} snapshots", index.len());
        Ok(manifest)
    }

    fn load_stage(&self, stage: &str) -> Result<(Manifest, String)> {
        let (m, digest) = Manifest::load(&self.root, stage)?;
        if m.config_sha256 != self.config_sha {
            log::warn!("{stage} outputs were produced with a different configuration");
        }
        Ok((m, digest))
    }

    fn snapshots(&self, quench: &Manifest) -> Result<Vec<Snapshot>> {
        let bytes = quench.read_verified(&self.root, &format!("{QUENCH}/index.json"))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Reconstruct every snapshot from its correlations and compare with the exact state.
    pub fn reconstruct(&self) -> Result<Manifest> {
        let (quench, quench_digest) = self.load_stage(QUENCH)?;
        let snaps = self.snapshots(&quench)?;
        let cfg = &self.cfg;
        let sectors = analysis::build_sectors(cfg.subsystem_sites, cfg.statistics.sectors)?;
        let cutoff = cfg.reconstruction.spectrum_cutoff;
        let levels = cfg.reconstruction.spectral_levels.clone();
        let results: Vec<(Diagnostics, Vec<(String, String)>)> = self.pool.install(|| {
            snaps
                .par_iter()
                .map(|snap| {
                    let dir = snap.dir(QUENCH);
                    let corr_bytes = quench.read_verified(&self.root, &format!("{dir}/correlations.json"))?;
                    let (c2, c4) = CorrelationRecord::from_json(std::str::from_utf8(&corr_bytes).map_err(|e| Error::Format(e.to_string()))?)?.decode()?;
                    let rho: DensityRecord = serde_json::from_slice(
                        &quench.read_verified(&self.root, &format!("{dir}/rho_exact.json"))?,
                    )?;
                    let rho = rho.decode()?;
                    let rec = reconstruction::reconstruct(&c2, &c4)?;
                    if rec.ansatz_warning() {
                        log::warn!("{}: max |C4~| = {:.3}", snap.key, rec.max_rotated_c4);
                    }
                    let assembled = rec.to_mode_basis(&rec.assembled)?;
                    let projected = rec.to_mode_basis(&rec.projected)?;
                    let gauss = rec.to_mode_basis(&rec.gaussian_density()?)?;
                    let n = c2.dim();
                    let rc2 = linalg::max_abs_diff(
                        correlations::two_point_from_density(&assembled, n)?.entries(),
                        c2.entries(),
                    );
                    let rc4 = correlations::four_point_from_density(&assembled, n)?.max_abs_diff(&c4);
                    let ex = analysis::entanglement_spectrum(&rho, cutoff)?;
                    let sg = analysis::entanglement_spectrum(&gauss, cutoff)?;
                    let sr = analysis::entanglement_spectrum(&projected, cutoff)?;
                    let diag = Diagnostics {
                        snapshot: snap.clone(),
                        theta_exact: analysis::non_gaussianity(&rho)?,
                        theta_recon: analysis::non_gaussianity(&assembled)?,
                        infidelity_exact: analysis::gaussian_infidelity(&rho)?,
                        infidelity_recon: analysis::gaussian_infidelity(&assembled)?,
                        residual_c2: rc2,
                        residual_c4: rc4,
                        max_rotated_c4: rec.max_rotated_c4,
                        ansatz_warning: rec.ansatz_warning(),
                        negativity: rec.negativity()?,
                        spectral_levels: levels.clone(),
                        spectral_error_gauss: analysis::spectral_error(&ex, &sg, &levels),
                        spectral_error_recon: analysis::spectral_error(&ex, &sr, &levels),
                        sectors_exact: analysis::sector_spectra(&rho, &sectors, cutoff)?,
                        sectors_recon: analysis::sector_spectra(&projected, &sectors, cutoff)?,
                    };
                    let out = snap.dir(RECONSTRUCT);
                    let record = ReconstructionRecord::new(&rec, &corr_bytes)?;
                    let mut files = Vec::new();
                    let rel = format!("{out}/reconstruction.json");
                    files.push((rel.clone(), io::write_json(&self.root.join(&rel), &record)?));
                    let rel = format!("{out}/diagnostics.json");
                    files.push((rel.clone(), io::write_json(&self.root.join(&rel), &diag)?));
                    Ok((diag, files))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut manifest = Manifest::new(RECONSTRUCT, &self.config_sha);
        manifest.inputs.insert(QUENCH.into(), quench_digest);
        let mut summary = Vec::new();
        let mut spectra = Vec::new();
        for (d, files) in &results {
            manifest.files.extend(files.iter().cloned());
            summary.push(SummaryRow::from(d));
            for (kind, list) in [("exact", &d.sectors_exact), ("recon", &d.sectors_recon)] {
                for s in list.iter() {
                    let label = s.sector.expect("sector spectra carry labels");
                    for (i, &e) in s.levels.iter().enumerate() {
                        spectra.push(SpectrumRow {
                            key: d.snapshot.key.clone(),
                            kind,
                            n: label.n,
                            m: label.m(),
                            s: label.s(),
                            level_index: i,
                            epsilon: e,
                        });
                    }
                }
            }
        }
        let worst = results.iter().map(|(d, _)| d.residual_c2.max(d.residual_c4)).fold(0.0, f64::max);
        log::info!("reconstruct: {} snapshots, worst correlation residual {worst:.2e}", results.len());
        for (name, text) in [
            ("summary.csv", io::csv_string(&summary)?),
            ("spectra.csv", io::csv_string(&spectra)?),
        ] {
            let rel = format!("{RECONSTRUCT}/{name}");
            io::atomic_write(&self.root.join(&rel), text.as_bytes())?;
            manifest.files.insert(rel, io::sha256_hex(text.as_bytes()));
        }
        manifest.write(&self.root)?;
        Ok(manifest)
    }

    /// Simulate the correlation-measurement protocol on stored states.
    pub fn measure(&self) -> Result<Manifest> {
        let (quench, quench_digest) = self.load_stage(QUENCH)?;
        let snaps: Vec<Snapshot> = self
            .snapshots(&quench)?
            .into_iter()
            .filter(|s| s.member < self.cfg.measurement.members)
            .collect();
        let na = self.cfg.subsystem_modes();
        let plan = measurement::plan_bases(na, self.cfg.measurement.order, self.cfg.measurement.shots)?;
        let rows: Vec<(MeasureRow, Vec<(String, String)>)> = self.pool.install(|| {
            snaps
                .par_iter()
                .map(|snap| {
                    let dir = snap.dir(QUENCH);
                    let state: StateRecord =
                        serde_json::from_slice(&quench.read_verified(&self.root, &format!("{dir}/state.json"))?)?;
                    let psi = state.decode()?;
                    let exact: CorrelationRecord = serde_json::from_slice(
                        &quench.read_verified(&self.root, &format!("{dir}/correlations.json"))?,
                    )?;
                    let (c2, c4) = exact.decode()?;
                    let seed = measurement::basis_seed(self.cfg.ensemble.master_seed, &snap.key);
                    let records = measurement::run_plan(&psi, &plan, seed)?;
                    let est = measurement::estimate_correlations(&records, na, plan.order)?;
                    let z2 = max_z(
                        (0..na).flat_map(|i| (0..na).map(move |j| (i, j))).map(|(i, j)| {
                            (est.c2.get(i, j) - c2.get(i, j), est.c2_se[(i, j)])
                        }),
                    );
                    let (est_c4, se_c4) = match (&est.c4, &est.c4_se) {
                        (Some(a), Some(b)) => (a.clone(), b.clone()),
                        _ => (FourPointTensor::zeros(na), FourPointTensor::zeros(na)),
                    };
                    let z4 = if est.c4.is_some() {
                        max_z(est_c4.as_slice().iter().zip(c4.as_slice()).zip(se_c4.as_slice()).map(|((a, b), s)| (a - b, *s)))
                    } else {
                        f64::NAN
                    };
                    let out = snap.dir(MEASURE);
                    let mut files = Vec::new();
                    let jsonl = measurement::records_to_jsonl(&records)?;
                    let rel = format!("{out}/shots.jsonl");
                    io::atomic_write(&self.root.join(&rel), jsonl.as_bytes())?;
                    files.push((rel, io::sha256_hex(jsonl.as_bytes())));
                    let record = CorrelationRecord::new(&est.c2, &est_c4)?.with_errors(&est.c2_se, &se_c4);
                    let rel = format!("{out}/estimate.json");
                    files.push((rel.clone(), io::write_json(&self.root.join(&rel), &record)?));
                    Ok((
                        MeasureRow {
                            key: snap.key.clone(),
                            u: snap.u,
                            t: snap.t,
                            bases: plan.bases.len(),
                            total_shots: plan.total_shots(),
                            scaling_constant: plan.scaling_constant(),
                            max_sigma_c2: z2,
                            max_sigma_c4: z4,
                        },
                        files,
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut manifest = Manifest::new(MEASURE, &self.config_sha);
        manifest.inputs.insert(QUENCH.into(), quench_digest);
        let mut summary = Vec::new();
        for (row, files) in rows {
            manifest.files.extend(files);
            summary.push(row);
        }
        let text = io::csv_string(&summary)?;
        let rel = format!("{MEASURE}/summary.csv");
        io::atomic_write(&self.root.join(&rel), text.as_bytes())?;
        manifest.files.insert(rel, io::sha256_hex(text.as_bytes()));
        let rel = format!("{MEASURE}/plan.json");
        manifest.files.insert(rel.clone(), io::write_json(&self.root.join(&rel), &plan)?);
        manifest.write(&self.root)?;
        log::info!("measure: {} snapshots, {} bases each", summary.len(), plan.bases.len());
        Ok(manifest)
    }

    fn diagnostics(&self) -> Result<(Vec<Diagnostics>, String)> {
        let (recon, digest) = self.load_stage(RECONSTRUCT)?;
        let mut out = Vec::new();
        for rel in recon.files.keys().filter(|k| k.ends_with("/diagnostics.json")) {
            out.push(serde_json::from_slice(&recon.read_verified(&self.root, rel)?)?);
        }
        Ok((out, digest))
    }

    /// Write the CSV tables of the requested figures.
    pub fn figures(&self, which: &[Figure]) -> Result<Manifest> {
        let (diags, digest) = self.diagnostics()?;
        let mut manifest = Manifest::new(FIGURES, &self.config_sha);
        manifest.inputs.insert(RECONSTRUCT.into(), digest);
        let mut tables: Vec<(String, String)> = Vec::new();
        let mut which = which.to_vec();
        which.sort();
        which.dedup();
        for fig in which {
            match fig {
                Figure::Fig2 => tables.extend(self.fig2(&diags)?),
                Figure::Fig3 => tables.extend(self.fig3(&diags)?),
                Figure::Fig4 => tables.extend(self.fig4(&diags)?),
            }
        }
        for (name, text) in tables {
            let rel = format!("{FIGURES}/{name}");
            io::atomic_write(&self.root.join(&rel), text.as_bytes())?;
            manifest.files.insert(rel, io::sha256_hex(text.as_bytes()));
        }
        manifest.write(&self.root)?;
        Ok(manifest)
    }

    fn grouped(diags: &[Diagnostics]) -> BTreeMap<(usize, usize), Vec<&Diagnostics>> {
        let mut g: BTreeMap<(usize, usize), Vec<&Diagnostics>> = BTreeMap::new();
        for d in diags {
            g.entry((d.snapshot.u_index, d.snapshot.t_index)).or_default().push(d);
        }
        for v in g.values_mut() {
            v.sort_by_key(|d| d.snapshot.member);
        }
        g
    }

    fn fig2(&self, diags: &[Diagnostics]) -> Result<Vec<(String, String)>> {
        let cfg = &self.cfg;
        let groups = Self::grouped(diags);
        let mut theta = Vec::new();
        for (&(ui, ti), ds) in &groups {
            theta.push(ThetaRow {
                u: cfg.interactions[ui],
                t: cfg.times[ti],
                tau: cfg.interactions[ui] * cfg.times[ti],
                members: ds.len(),
                theta_exact: mean(ds.iter().map(|d| d.theta_exact)),
                theta_recon: mean(ds.iter().map(|d| d.theta_recon)),
                infidelity_exact: mean(ds.iter().map(|d| d.infidelity_exact)),
                infidelity_recon: mean(ds.iter().map(|d| d.infidelity_recon)),
            });
        }
        let mut fits = Vec::new();
        for (ui, &u) in cfg.interactions.iter().enumerate() {
            let rows: Vec<&ThetaRow> = theta.iter().filter(|r| r.u == u && r.tau > 0.0).collect();
            let Some(first) = rows.iter().map(|r| r.tau).min_by(f64::total_cmp) else {
                continue;
            };
            let hi = first * cfg.figures.early_window;
            let early: Vec<&&ThetaRow> = rows.iter().filter(|r| r.tau <= hi * (1.0 + 1e-12)).collect();
            let taus: Vec<f64> = early.iter().map(|r| r.tau).collect();
            let pick = |f: fn(&ThetaRow) -> f64| early.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (se, sr) = if early.len() >= 2 {
                (
                    linalg::linear_slope(&taus, &pick(|r| r.theta_exact)),
                    linalg::linear_slope(&taus, &pick(|r| r.theta_recon)),
                )
            } else {
                log::warn!("fig2: fewer than two early-time points for U index {ui}");
                (f64::NAN, f64::NAN)
            };
            let exponent = |v: Vec<f64>| {
                if early.len() >= 2 && v.iter().all(|&x| x > 0.0) {
                    linalg::loglog_slope(&taus, &v)
                } else {
                    f64::NAN
                }
            };
            fits.push(FitRow {
                u,
                tau_lo: first,
                tau_hi: taus.iter().copied().fold(first, f64::max),
                points: early.len(),
                theta_slope_exact: se,
                theta_slope_recon: sr,
                slope_ratio: sr / se,
                infidelity_exponent_exact: exponent(pick(|r| r.infidelity_exact)),
                infidelity_exponent_recon: exponent(pick(|r| r.infidelity_recon)),
            });
        }
        let ti = nearest(&cfg.times, cfg.figures.fixed_time);
        let mut errors = Vec::new();
        for (ui, &u) in cfg.interactions.iter().enumerate() {
            let Some(ds) = groups.get(&(ui, ti)) else { continue };
            for (li, &level) in cfg.reconstruction.spectral_levels.iter().enumerate() {
                let g: Vec<f64> = ds.iter().filter_map(|d| d.spectral_error_gauss[li]).collect();
                let r: Vec<f64> = ds.iter().filter_map(|d| d.spectral_error_recon[li]).collect();
                if g.is_empty() {
                    continue;
                }
                errors.push(SpectralRow {
                    u,
                    t: cfg.times[ti],
                    tau: u * cfg.times[ti],
                    level,
                    delta_gauss: mean(g.into_iter()),
                    delta_recon: mean(r.into_iter()),
                });
            }
        }
        let mut slopes = Vec::new();
        for &level in &cfg.reconstruction.spectral_levels {
            let rows: Vec<&SpectralRow> = errors
                .iter()
                .filter(|r| r.level == level && r.u > 0.0 && r.delta_gauss > 0.0 && r.delta_recon > 0.0)
                .collect();
            if rows.len() < 2 {
                continue;
            }
            let us: Vec<f64> = rows.iter().map(|r| r.u).collect();
            slopes.push(SlopeRow {
                level,
                points: rows.len(),
                slope_gauss: linalg::loglog_slope(&us, &rows.iter().map(|r| r.delta_gauss).collect::<Vec<_>>()),
                slope_recon: linalg::loglog_slope(&us, &rows.iter().map(|r| r.delta_recon).collect::<Vec<_>>()),
            });
        }
        Ok(vec![
            ("fig2_theta.csv".into(), io::csv_string(&theta)?),
            ("fig2_theta_fit.csv".into(), io::csv_string(&fits)?),
            ("fig2_spectral_error.csv".into(), io::csv_string(&errors)?),
            ("fig2_spectral_slopes.csv".into(), io::csv_string(&slopes)?),
        ])
    }

    fn stats_options(&self, tag: &str) -> StatisticsOptions {
        self.cfg
            .statistics
            .options(measurement::basis_seed(self.cfg.ensemble.master_seed, tag))
    }

    /// Gap statistics of one `(U, t)` cell for the exact and reconstructed states.
    fn cell_statistics(
        &self,
        ds: &[&Diagnostics],
        tag: &str,
    ) -> (Option<GapStatistics>, Option<GapStatistics>) {
        let opts = self.stats_options(tag);
        let run = |pick: fn(&Diagnostics) -> &Vec<EntanglementSpectrum>| -> Option<GapStatistics> {
            let result = if self.cfg.statistics.member_average {
                let members: Vec<Vec<EntanglementSpectrum>> = ds.iter().map(|d| pick(d).clone()).collect();
                analysis::member_averaged_mean(&members, &opts).map(|(mean_r, ci)| GapStatistics {
                    ratios: Vec::new(),
                    histogram: Vec::new(),
                    mean_r,
                    ci,
                    dropped_degenerate: 0,
                    sectors_used: 0,
                })
            } else {
                let pooled: Vec<EntanglementSpectrum> = ds.iter().flat_map(|d| pick(d).iter().cloned()).collect();
                analysis::gap_statistics(&pooled, &opts)
            };
            match result {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("{tag}: {e}");
                    None
                }
            }
        };
        (run(|d| &d.sectors_exact), run(|d| &d.sectors_recon))
    }

    fn level_u_index(&self) -> usize {
        match self.cfg.figures.level_u {
            Some(u) => nearest(&self.cfg.interactions, u),
            None => (0..self.cfg.interactions.len())
                .max_by(|&a, &b| self.cfg.interactions[a].total_cmp(&self.cfg.interactions[b]))
                .unwrap_or(0),
        }
    }

    fn fig3(&self, diags: &[Diagnostics]) -> Result<Vec<(String, String)>> {
        let cfg = &self.cfg;
        let groups = Self::grouped(diags);
        let ui = self.level_u_index();
        let u = cfg.interactions[ui];
        let mut series = Vec::new();
        let mut stats_at = BTreeMap::new();
        for (ti, &t) in cfg.times.iter().enumerate() {
            let Some(ds) = groups.get(&(ui, ti)) else { continue };
            let (ex, rc) = self.cell_statistics(ds, &key(ui, 0, ti));
            series.push(LevelRow::new(u, t, ds, ex.as_ref(), rc.as_ref()));
            stats_at.insert(ti, (ex, rc));
        }
        let (early, late) = match cfg.figures.histogram_times {
            Some([a, b]) => (nearest(&cfg.times, a), nearest(&cfg.times, b)),
            None => {
                let first = (0..cfg.times.len()).find(|&k| cfg.times[k] > 0.0).unwrap_or(0);
                (first, cfg.times.len() - 1)
            }
        };
        let mut hist = Vec::new();
        for ti in [early, late] {
            if let Some((ex, rc)) = stats_at.get(&ti) {
                for (kind, s) in [("exact", ex), ("recon", rc)] {
                    if let Some(s) = s {
                        push_histogram(&mut hist, cfg.times[ti], kind, s);
                    }
                }
            }
        }
        let opts = self.stats_options("reference");
        for (kind, name) in [(ReferenceKind::Poisson, "poisson"), (ReferenceKind::Gue, "gue")] {
            let s = analysis::reference_distribution(kind, cfg.statistics.reference_samples, opts.seed, &opts)?;
            push_histogram(&mut hist, f64::NAN, name, &s);
        }
        Ok(vec![
            ("fig3_mean_r.csv".into(), io::csv_string(&series)?),
            ("fig3_histograms.csv".into(), io::csv_string(&hist)?),
        ])
    }

    fn fig4(&self, diags: &[Diagnostics]) -> Result<Vec<(String, String)>> {
        let groups = Self::grouped(diags);
        let cells: Vec<_> = groups.iter().collect();
        let rows: Vec<LevelRow> = self.pool.install(|| {
            cells
                .par_iter()
                .map(|(&(ui, ti), ds)| {
                    let (ex, rc) = self.cell_statistics(ds, &key(ui, 0, ti));
                    LevelRow::new(self.cfg.interactions[ui], self.cfg.times[ti], ds, ex.as_ref(), rc.as_ref())
                })
                .collect()
        });
        let agree = rows.iter().filter(|r| r.agree).count();
        log::info!("fig4: exact and reconstructed agree in {agree} of {} cells", rows.len());
        Ok(vec![("fig4_grid.csv".into(), io::csv_string(&rows)?)])
    }
}

fn max_z(items: impl Iterator<Item = (linalg::C64, linalg::C64)>) -> f64 {
    items
        .map(|(d, s)| {
            let z = |x: f64, e: f64| if e > 0.0 { x.abs() / e } else if x.abs() < 1e-12 { 0.0 } else { f64::INFINITY };
            z(d.re, s.re).max(z(d.im, s.im))
        })
        .fold(0.0, f64::max)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn nearest(grid: &[f64], x: f64) -> usize {
    (0..grid.len())
        .min_by(|&a, &b| (grid[a] - x).abs().total_cmp(&(grid[b] - x).abs()))
        .unwrap_or(0)
}

fn push_histogram(out: &mut Vec<HistogramRow>, t: f64, kind: &'static str, s: &GapStatistics) {
    for (c, d) in s.bin_centers().into_iter().zip(&s.histogram) {
        out.push(HistogramRow {
            t,
            kind,
            bin_center: c,
            density: *d,
        });
    }
}

#[derive(Serialize)]
struct SummaryRow {
    key: String,
    u: f64,
    member: usize,
    t: f64,
    tau: f64,
    theta_exact: f64,
    theta_recon: f64,
    residual_c2: f64,
    residual_c4: f64,
    max_rotated_c4: f64,
    negativity: f64,
    ansatz_warning: bool,
}

impl From<&Diagnostics> for SummaryRow {
    fn from(d: &Diagnostics) -> Self {
        SummaryRow {
            key: d.snapshot.key.clone(),
            u: d.snapshot.u,
            member: d.snapshot.member,
            t: d.snapshot.t,
            tau: d.snapshot.tau,
            theta_exact: d.theta_exact,
            theta_recon: d.theta_recon,
            residual_c2: d.residual_c2,
            residual_c4: d.residual_c4,
            max_rotated_c4: d.max_rotated_c4,
            negativity: d.negativity,
            ansatz_warning: d.ansatz_warning,
        }
    }
}

#[derive(Serialize)]
struct SpectrumRow {
    key: String,
    kind: &'static str,
    n: usize,
    m: f64,
    s: Option<f64>,
    level_index: usize,
    epsilon: f64,
}

#[derive(Serialize)]
struct MeasureRow {
    key: String,
    u: f64,
    t: f64,
    bases: usize,
    total_shots: usize,
    scaling_constant: f64,
    max_sigma_c2: f64,
    max_sigma_c4: f64,
}

#[derive(Serialize)]
struct ThetaRow {
    u: f64,
    t: f64,
    tau: f64,
    members: usize,
    theta_exact: f64,
    theta_recon: f64,
    infidelity_exact: f64,
    infidelity_recon: f64,
}

#[derive(Serialize)]
struct FitRow {
    u: f64,
    tau_lo: f64,
    tau_hi: f64,
    points: usize,
    theta_slope_exact: f64,
    theta_slope_recon: f64,
    slope_ratio: f64,
    infidelity_exponent_exact: f64,
    infidelity_exponent_recon: f64,
}

#[derive(Serialize)]
struct SpectralRow {
    u: f64,
    t: f64,
    tau: f64,
    level: usize,
    delta_gauss: f64,
    delta_recon: f64,
}

#[derive(Serialize)]
struct SlopeRow {
    level: usize,
    points: usize,
    slope_gauss: f64,
    slope_recon: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    t: f64,
    kind: &'static str,
    bin_center: f64,
    density: f64,
}

#[derive(Serialize)]
struct LevelRow {
    u: f64,
    t: f64,
    tau: f64,
    theta_exact: f64,
    theta_recon: f64,
    mean_r_exact: f64,
    ci_lo_exact: f64,
    ci_hi_exact: f64,
    ratios_exact: usize,
    mean_r_recon: f64,
    ci_lo_recon: f64,
    ci_hi_recon: f64,
    ratios_recon: usize,
    agree: bool,
}

impl LevelRow {
    fn new(u: f64, t: f64, ds: &[&Diagnostics], ex: Option<&GapStatistics>, rc: Option<&GapStatistics>) -> Self {
        let nan = (f64::NAN, (f64::NAN, f64::NAN), 0);
        let unpack = |s: Option<&GapStatistics>| s.map(|s| (s.mean_r, s.ci, s.ratios.len())).unwrap_or(nan);
        let (me, ce, ne) = unpack(ex);
        let (mr, cr, nr) = unpack(rc);
        LevelRow {
            u,
            t,
            tau: u * t,
            theta_exact: mean(ds.iter().map(|d| d.theta_exact)),
            theta_recon: mean(ds.iter().map(|d| d.theta_recon)),
            mean_r_exact: me,
            ci_lo_exact: ce.0,
            ci_hi_exact: ce.1,
            ratios_exact: ne,
            mean_r_recon: mr,
            ci_lo_recon: cr.0,
            ci_hi_recon: cr.1,
            ratios_recon: nr,
            agree: within_ci(me, ce, mr, cr),
        }
    }
}

/// Either mean lies inside the other's interval.
pub fn within_ci(a: f64, ca: (f64, f64), b: f64, cb: (f64, f64)) -> bool {
    (a >= cb.0 && a <= cb.1) || (b >= ca.0 && b <= ca.1)
}
