//! Invariant suite behind the `verify` command.

use std::path::Path;

use maxlod::corrector::{assemble_corrector_basis, ideal_corrector_basis, Discretization};
use maxlod::fem::{assemble_curl_curl, discrete_gradient_free, CoefficientField, ProblemSpec, IDENTITY};
use maxlod::mesh::{build_structured_mesh, graph_diameter, refine, BoxDomain, MeshPair, Region};
use maxlod::sparse::{energy, SparseOperator};
use maxlod::{c64, Result};

use crate::config::RunConfig;
use crate::Failure;

const EXACT_TOL: f64 = 1e-12;
const SATURATION_TOL: f64 = 1e-8;

struct Check {
    name: &'static str,
    value: f64,
    tol: f64,
}

fn minus_identity(a: &SparseOperator) -> Result<SparseOperator> {
    a.add_scaled(c64::new(-1.0, 0.0), &SparseOperator::identity(a.ncols()))
}

fn checks(cfg: &RunConfig, pair: MeshPair) -> Result<Vec<Check>> {
    let omega = cfg.omegas()[0];
    let spec = ProblemSpec::from_kind(&pair.fine, &cfg.coefficient(), cfg.seed, omega, cfg.source())?;
    let d = Discretization::new(pair, spec)?;
    let ip = &d.interp;
    let projection = minus_identity(&ip.p.matmul(&ip.r)?)?.max_abs();
    let gh = discrete_gradient_free(&d.pair.fine, &ip.fine_dofs, &ip.fine_vertices);
    let g_coarse = discrete_gradient_free(&d.pair.coarse, &ip.coarse_dofs, &ip.coarse_vertices);
    let commuting = ip.p.matmul(&gh)?.add_scaled(c64::new(-1.0, 0.0), &g_coarse.matmul(&ip.q)?)?.max_abs();

    let fine = &d.pair.fine;
    let a = assemble_curl_curl(fine, &ip.fine_dofs, &CoefficientField::uniform(fine.num_cells(), IDENTITY))?;
    let region = Region::whole(fine);
    let complex = a.matmul(&discrete_gradient_free(fine, &ip.fine_dofs, &region.interior_vertices))?.max_abs();

    let local = assemble_corrector_basis(&d, graph_diameter(&d.pair.coarse))?;
    let ideal = ideal_corrector_basis(&d, cfg.method.ideal_cap)?;
    let n = d.fine_norm_matrix()?;
    let mut saturation = 0.0f64;
    for j in 0..d.num_coarse() {
        let k = ideal.column(j);
        let diff: Vec<c64> = local.column(j).iter().zip(&k).map(|(x, y)| x - y).collect();
        let scale = energy(&n, &k).max(0.0).sqrt();
        let abs = energy(&n, &diff).max(0.0).sqrt();
        saturation = saturation.max(if scale > 0.0 { abs / scale } else { abs });
    }
    Ok(vec![
        Check { name: "projection", value: projection, tol: EXACT_TOL },
        Check { name: "commuting", value: commuting, tol: EXACT_TOL },
        Check { name: "curl_grad", value: complex, tol: EXACT_TOL },
        Check { name: "saturation", value: saturation, tol: SATURATION_TOL },
    ])
}

pub fn run(cfg: &RunConfig, dir: &Path, env: serde_json::Value) -> std::result::Result<(), Failure> {
    let coarse = build_structured_mesh(cfg.mesh.n_coarse, BoxDomain::unit())?;
    let pair = refine(&coarse, cfg.mesh.refine_factor)?;
    let checks = checks(cfg, pair)?;
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("check,value,tol,status\n");
    let mut failed = 0;
    for c in &checks {
        let pass = c.value <= c.tol;
        failed += usize::from(!pass);
        let status = if pass { "PASS" } else { "FAIL" };
        println!("{status} {}: {:.3e} (tol {:.0e})", c.name, c.value, c.tol);
        csv.push_str(&format!("{},{:e},{:e},{}\n", c.name, c.value, c.tol, status.to_lowercase()));
    }
    std::fs::write(dir.join("results.csv"), csv)?;
    let manifest = serde_json::json!({ "environment": env, "failed_checks": failed });
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&manifest).expect("json") + "\n")?;
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Compute(format!("{failed} verify checks failed")))
    }
}
