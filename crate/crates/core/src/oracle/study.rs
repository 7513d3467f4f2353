use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use super::{error_volume, evaluate, eval_grid_points, residual_rms, synthesize_measurement, GaussianPlume, Metrics};
use crate::error::Result;
use crate::io::{write_pfm, write_voxgrid};
use crate::optim::{train, TrainConfig};
use crate::pinn::LossWeights;
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOptions {
    /// Nodes per axis of the evaluation grid.
    pub eval_resolution: usize,
    /// Output directory for per-regime runs, error volumes and the report.
    pub out: Option<PathBuf>,
    /// Nodes per axis used for the residual magnitudes in the report.
    pub residual_resolution: usize,
    /// Train the three regimes at the same time instead of one after another. Results are
    /// identical either way; only the interleaving of log writes differs.
    pub concurrent: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            eval_resolution: 32,
            out: None,
            residual_resolution: 8,
            concurrent: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeEntry {
    pub name: String,
    pub weights: LossWeights,
    pub metrics: Metrics,
    /// RMS residuals `(r_mass, |r_mom|, r_heat)` of the reconstruction.
    pub residual_rms: [f64; 3],
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub entries: Vec<RegimeEntry>,
    /// RMS residuals of the ground-truth plume itself (model mismatch).
    pub truth_residual_rms: [f64; 3],
}

impl StudyReport {
    pub fn entry(&self, name: &str) -> Option<&RegimeEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "regime,lambda_bos,lambda_boundary,lambda_pde,T_rmse_K,T_nrmse,T_maxabs_K,p_rmse,p_nrmse,p_maxabs,u_rmse,u_nrmse,u_maxabs,r_mass_rms,r_mom_rms,r_heat_rms,final_loss\n",
        );
        for e in &self.entries {
            let m = &e.metrics;
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                e.name,
                e.weights.lambda[0],
                e.weights.lambda[1],
                e.weights.lambda[2],
                m.t.rmse,
                m.t.nrmse,
                m.t.max_abs,
                m.p.rmse,
                m.p.nrmse,
                m.p.max_abs,
                m.u.rmse,
                m.u.nrmse,
                m.u.max_abs,
                e.residual_rms[0],
                e.residual_rms[1],
                e.residual_rms[2],
                e.final_loss
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "regime            T rmse [K]   p rmse       u rmse");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<16}  {:<11.4e}  {:<11.4e}  {:<11.4e}",
                e.name, e.metrics.t.rmse, e.metrics.p.rmse, e.metrics.u.rmse
            );
        }
        if let (Some(a), Some(c)) = (self.entry("bos_boundary"), self.entry("combined")) {
            let _ = writeln!(
                s,
                "bos_boundary / combined: p rmse ratio {:.3}, u rmse ratio {:.3}",
                a.metrics.p.rmse / c.metrics.p.rmse,
                a.metrics.u.rmse / c.metrics.u.rmse
            );
        }
        let r = self.truth_residual_rms;
        let _ = writeln!(
            s,
            "ground-truth residual rms: mass {:.3e}, momentum {:.3e}, heat {:.3e}",
            r[0], r[1], r[2]
        );
        s
    }
}

/// `(name, weights)` of the BOS+boundary, PDE+boundary and combined regimes derived from
/// the λ of `base`.
pub fn regime_profiles(base: &LossWeights) -> [(&'static str, LossWeights); 3] {
    let [l1, l2, l3] = base.lambda;
    let g = base.gamma;
    [
        (
            "bos_boundary",
            LossWeights {
                lambda: [l1, l2, 0.0],
                gamma: g,
            },
        ),
        (
            "pde_boundary",
            LossWeights {
                lambda: [0.0, l2, l3],
                gamma: g,
            },
        ),
        (
            "combined",
            LossWeights {
                lambda: [l1, l2, l3],
                gamma: g,
            },
        ),
    ]
}

/// Synthesizes the plume measurement, trains the three regimes with identical seeds and
/// iteration counts, and evaluates each against the plume.
pub fn regime_study(
    scene: &Scene<f64>,
    plume: &GaussianPlume,
    cfg: &TrainConfig,
    opts: &StudyOptions,
) -> Result<StudyReport> {
    let (i_ref, i_flow) = synthesize_measurement(scene, plume, scene.render.spp, scene.render.seed)?;
    if let Some(d) = &opts.out {
        fs::create_dir_all(d)?;
        write_pfm(d.join("I_ref.pfm"), &i_ref.to_pfm())?;
        write_pfm(d.join("I_flow.pfm"), &i_flow.to_pfm())?;
    }
    let res_pts = eval_grid_points(&scene.room, opts.residual_resolution.max(2))?;
    let run = |(name, w): (&'static str, LossWeights)| -> Result<RegimeEntry> {
        let mut c = cfg.clone();
        c.weights = w;
        let dir = opts.out.as_ref().map(|d| d.join(name));
        let out = train(scene, Some(&i_flow), plume, &c, dir.as_deref())?;
        let metrics = evaluate(&out.field, plume, scene, opts.eval_resolution)?;
        if let Some(d) = &dir {
            let ev = error_volume(&out.field, plume, scene, opts.eval_resolution)?;
            write_voxgrid(d.join("error.vox"), &ev)?;
        }
        Ok(RegimeEntry {
            name: name.to_string(),
            weights: w,
            metrics,
            residual_rms: residual_rms(&out.field, &scene.nondim, &res_pts)?,
            final_loss: out.history.last().map_or(f64::NAN, |r| r.total),
        })
    };
    let profiles = regime_profiles(&cfg.weights);
    let entries = if opts.concurrent {
        profiles.into_par_iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        profiles.into_iter().map(run).collect::<Result<Vec<_>>>()?
    };
    let report = StudyReport {
        entries,
        truth_residual_rms: residual_rms(plume, &scene.nondim, &res_pts)?,
    };
    if let Some(d) = &opts.out {
        fs::write(d.join("report.csv"), report.to_csv())?;
        fs::write(d.join("summary.txt"), report.summary())?;
    }
    Ok(report)
}
