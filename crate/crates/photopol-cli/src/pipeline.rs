//! Subcommand implementations and the on-disk run-directory layout.
//!
//! A run directory holds `scene.meta` (flat key = value), `stack.phmap`
//! (light-major x colour x angle planes), the ground-truth maps
//! (`truth_*.phmap`), decomposition outputs (`iun.phmap`, `rho.phmap`,
//! `phi.phmap`) and reconstruction outputs (`height.phmap`,
//! `albedo.phmap`).

use std::fs;
use std::path::Path;

use photopol::constraints::{assemble, AssembleOptions, MethodVariant};
use photopol::error::{Error, Result};
use photopol::io::{
    mask_from_finite, read_float_map, scene_from_key_values, scene_to_key_values,
    write_float_map, write_png_gray, KeyValues,
};
use photopol::lightest::{
    ambiguous_gradients, estimate_lights, resolve_ambiguity, LightEstimationOptions,
    SphericalLight,
};
use photopol::metrics::compute_metrics;
use photopol::poldecomp::{fit_multichannel, FitOptions, PolarisationImage};
use photopol::solver::{
    solve_height, solve_prop13, GradientOperator, HeightSolution, Prop13Options, SolveOptions,
};
use photopol::synth::{render_stack, SceneConfig};
use photopol::{Mask, PixelGrid, RefractiveIndex, UnitVector3};

use crate::{AlbedoArgs, DecomposeArgs, EstimateLightArgs, EvalArgs, ReconstructArgs, SynthArgs};

pub fn load_scene(dir: &Path) -> Result<SceneConfig> {
    let text = fs::read_to_string(dir.join("scene.meta"))?;
    scene_from_key_values(&KeyValues::parse(&text)?)
}

fn grid_refs(grids: &[PixelGrid<f64>]) -> Vec<&PixelGrid<f64>> {
    grids.iter().collect()
}

pub fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut kv = match &args.config {
        Some(path) => KeyValues::parse(&fs::read_to_string(path)?)?,
        None => KeyValues::default(),
    };
    for kvpair in &args.set {
        let (k, v) = kvpair.split_once('=').ok_or_else(|| {
            Error::InvalidInput(format!("--set '{kvpair}' is not KEY=VALUE"))
        })?;
        kv.set(k.trim(), v.trim());
    }
    let cfg = scene_from_key_values(&kv)?;
    let stack = render_stack(&cfg)?;
    fs::create_dir_all(&args.out)?;

    // resolved configuration becomes the sidecar other commands read
    fs::write(args.out.join("scene.meta"), scene_to_key_values(&cfg).render())?;
    write_float_map(
        &args.out.join("stack.phmap"),
        &stack.images.iter().collect::<Vec<_>>(),
        Some(&stack.mask),
    )?;
    write_float_map(&args.out.join("truth_height.phmap"), &[&stack.truth.height], Some(&stack.mask))?;
    let (nx, ny, nz) = split_normals(&stack.truth.normals);
    write_float_map(&args.out.join("truth_normals.phmap"), &[&nx, &ny, &nz], Some(&stack.mask))?;
    write_float_map(&args.out.join("truth_iun.phmap"), &grid_refs(&stack.truth.i_un), Some(&stack.mask))?;
    write_float_map(&args.out.join("truth_rho.phmap"), &[&stack.truth.rho], Some(&stack.mask))?;
    write_float_map(&args.out.join("truth_phi.phmap"), &[&stack.truth.phi], Some(&stack.mask))?;
    write_float_map(&args.out.join("truth_albedo.phmap"), &grid_refs(&stack.truth.albedo), Some(&stack.mask))?;

    if args.png {
        let angles = stack.angles.len();
        for light in 0..stack.n_lights() {
            for ch in 0..stack.colour_channels {
                for j in 0..angles {
                    let name = format!("stack_l{light}_c{ch}_a{j:02}.png");
                    write_png_gray(
                        &args.out.join(name),
                        stack.image(light, ch, j),
                        Some(&stack.mask),
                        0.0,
                        1.0,
                    )?;
                }
            }
        }
    }
    println!(
        "{}",
        serde_json::json!({
            "scene": args.out.join("scene.meta"),
            "images": stack.images.len(),
            "masked_pixels": stack.mask.count(),
        })
    );
    Ok(())
}

fn split_normals(n: &PixelGrid<[f64; 3]>) -> (PixelGrid<f64>, PixelGrid<f64>, PixelGrid<f64>) {
    (n.map(|v| v[0]), n.map(|v| v[1]), n.map(|v| v[2]))
}

/// Load the captured stack of a run directory back into memory. Falls back
/// to the per-image PNG export when the float map is absent.
pub fn load_stack(dir: &Path) -> Result<(SceneConfig, Vec<PixelGrid<f64>>, Mask)> {
    let cfg = load_scene(dir)?;
    let channels = cfg.albedo.channels();
    let expected = cfg.lights.len() * channels * cfg.polariser_angles.len();
    let float_path = dir.join("stack.phmap");
    let (images, mask) = if float_path.exists() {
        let images = read_float_map(&float_path)?;
        let mask = mask_from_finite(&images);
        (images, mask)
    } else {
        // PNG export: masked-out pixels are plain zeros, so the domain
        // comes from the scene configuration instead
        let mut images = Vec::with_capacity(expected);
        for light in 0..cfg.lights.len() {
            for ch in 0..channels {
                for j in 0..cfg.polariser_angles.len() {
                    let name = format!("stack_l{light}_c{ch}_a{j:02}.png");
                    images.push(photopol::io::read_png_gray(&dir.join(name))?);
                }
            }
        }
        let mask = match cfg.mask_radius {
            Some(r) => Mask::disc(cfg.width, cfg.height, r),
            None => Mask::full(cfg.width, cfg.height),
        };
        (images, mask)
    };
    if images.len() != expected {
        return Err(Error::Format(format!(
            "stack has {} planes, scene expects {expected}",
            images.len()
        )));
    }
    Ok((cfg, images, mask))
}

pub fn cmd_decompose(args: DecomposeArgs) -> Result<()> {
    let (cfg, images, mask) = load_stack(&args.input)?;
    let out = args.out.unwrap_or_else(|| args.input.clone());
    fs::create_dir_all(&out)?;

    let channels = cfg.albedo.channels();
    let n_angles = cfg.polariser_angles.len();
    let series: Vec<Vec<&PixelGrid<f64>>> = (0..cfg.lights.len() * channels)
        .map(|lc| (0..n_angles).map(|j| &images[lc * n_angles + j]).collect())
        .collect();
    let (pol, diag) =
        fit_multichannel(&series, &cfg.polariser_angles, &mask, None, &FitOptions::default())?;

    write_float_map(&out.join("iun.phmap"), &grid_refs(&pol.i_un), Some(&pol.valid))?;
    write_float_map(&out.join("rho.phmap"), &[&pol.rho], Some(&pol.valid))?;
    write_float_map(&out.join("phi.phmap"), &[&pol.phi], Some(&pol.valid))?;
    println!(
        "{}",
        serde_json::json!({
            "iterations": diag.iterations,
            "converged": diag.converged,
            "objective": diag.objective_trace.last(),
            "degenerate_pixels": diag.degenerate_pixels,
            "valid_pixels": pol.valid.count(),
        })
    );
    Ok(())
}

/// Load a decomposition (written by `decompose`) with its scene sidecar.
pub fn load_polarisation(dir: &Path) -> Result<(SceneConfig, PolarisationImage)> {
    let cfg = load_scene(dir)?;
    let i_un = read_float_map(&dir.join("iun.phmap"))?;
    let rho = read_float_map(&dir.join("rho.phmap"))?;
    let phi = read_float_map(&dir.join("phi.phmap"))?;
    if rho.len() != 1 || phi.len() != 1 {
        return Err(Error::Format("rho/phi maps must be single channel".into()));
    }
    let mut all = i_un.clone();
    all.extend(rho.iter().cloned());
    all.extend(phi.iter().cloned());
    let valid = mask_from_finite(&all);
    let rho = rho.into_iter().next().unwrap();
    let clamp = FitOptions::default().rho_clamp;
    let clamped = rho.map(|v| v.is_finite() && v >= clamp * (1.0 - 1e-9));
    // NaN padding outside the valid domain must not leak into arithmetic
    let scrub = |g: PixelGrid<f64>| -> PixelGrid<f64> {
        let mut g = g;
        for p in 0..g.len() {
            if !g.at(p).is_finite() {
                g.set_at(p, 0.0);
            }
        }
        g
    };
    Ok((
        cfg,
        PolarisationImage {
            i_un: i_un.into_iter().map(scrub).collect(),
            rho: scrub(rho),
            phi: scrub(phi.into_iter().next().unwrap()),
            valid,
            clamped,
        },
    ))
}

fn light_json(v: &UnitVector3) -> serde_json::Value {
    let sph = SphericalLight::from_unit(*v);
    serde_json::json!({
        "unit": [v.x(), v.y(), v.z()],
        "theta_deg": sph.theta.to_degrees(),
        "alpha_deg": sph.alpha.to_degrees(),
    })
}

pub fn cmd_estimate_light(args: EstimateLightArgs) -> Result<()> {
    let (cfg, pol) = load_polarisation(&args.input)?;
    let (est, resolved) = estimate_and_resolve(&cfg, &pol, args.seed)?;
    let record = serde_json::json!({
        "s": light_json(&resolved.s),
        "t": light_json(&resolved.t),
        "objective": est.objective,
        "flipped": resolved.flipped,
        "tie": resolved.tie,
        "pixels": est.pixels_used,
        "restarts": est.restarts.iter().map(|r| r.objective).collect::<Vec<_>>(),
    });
    println!("{record}");
    if resolved.tie {
        eprintln!("warning: convexity scores tied; kept the unflipped candidate");
    }
    if let Some(path) = args.json {
        fs::write(path, format!("{record}\n"))?;
    }
    Ok(())
}

fn estimate_and_resolve(
    cfg: &SceneConfig,
    pol: &PolarisationImage,
    seed: u64,
) -> Result<(photopol::lightest::LightEstimate, photopol::lightest::ResolvedLights)> {
    if cfg.lights.len() < 2 {
        return Err(Error::InvalidInput(
            "light estimation needs a two-source capture".into(),
        ));
    }
    let channels = cfg.albedo.channels();
    let grads = ambiguous_gradients(pol, cfg.eta);
    let opts = LightEstimationOptions { seed, ..Default::default() };
    let est = estimate_lights(pol, None, Some(channels), &grads, &opts)?;
    let g = GradientOperator::build(&pol.valid, cfg.scheme)?;
    let asm = AssembleOptions { light_split: Some(channels), ..Default::default() };
    let resolved = resolve_ambiguity(&est, |s, t| {
        let field =
            assemble(MethodVariant::Prop1, pol, None, s, Some(t), cfg.viewer, None, None, cfg.eta, &asm)?;
        solve_height(&field, &g, &SolveOptions::default())
    })?;
    Ok((est, resolved))
}

pub fn cmd_reconstruct(args: ReconstructArgs) -> Result<()> {
    let (mut cfg, pol) = load_polarisation(&args.input)?;
    if let Some(eta) = args.eta {
        cfg.eta = RefractiveIndex::new(eta)?;
    }
    let out = args.out.unwrap_or_else(|| args.input.clone());
    fs::create_dir_all(&out)?;
    let channels = cfg.albedo.channels();

    let (s, t) = match args.lights.as_str() {
        "known" => {
            let s = cfg.lights[0];
            let t = cfg.lights.get(1).copied();
            (s, t)
        }
        "estimated" => {
            let (_, resolved) = estimate_and_resolve(&cfg, &pol, args.seed)?;
            (resolved.s, Some(resolved.t))
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "--lights must be 'known' or 'estimated', got '{other}'"
            )))
        }
    };

    let albedo_assumed: Vec<PixelGrid<f64>> = match &args.albedo_map {
        Some(path) => read_float_map(path)?,
        None => vec![PixelGrid::filled(cfg.width, cfg.height, 1.0)],
    };
    let asm = AssembleOptions {
        light_split: Some(channels),
        weights: photopol::constraints::RowWeights {
            dop: args.weight_dop,
            intensity: args.weight_intensity,
            phase: args.weight_phase,
            specular: 1.0,
        },
        ..Default::default()
    };
    let g = GradientOperator::build(&pol.valid, cfg.scheme)?;

    let (solution, albedo_out): (HeightSolution, Option<Vec<PixelGrid<f64>>>) =
        if args.variant == "prop13" {
            let t = t.ok_or(Error::MissingInput { variant: "prop13", what: "second light" })?;
            let opts = Prop13Options { albedo_lambda: args.albedo_lambda, ..Default::default() };
            let res = solve_prop13(&pol, None, s, t, cfg.viewer, cfg.eta, None, &g, &asm, &opts)?;
            (res.height, Some(res.albedo))
        } else {
            let variant = MethodVariant::parse(&args.variant)?;
            let field = assemble(
                variant,
                &pol,
                None,
                s,
                t,
                cfg.viewer,
                variant.needs_albedo().then_some(&albedo_assumed[..]),
                None,
                cfg.eta,
                &asm,
            )?;
            (solve_height(&field, &g, &SolveOptions::default())?, None)
        };

    write_float_map(&out.join("height.phmap"), &[&solution.z], Some(&solution.mask))?;
    if let Some(albedo) = &albedo_out {
        write_float_map(&out.join("albedo.phmap"), &grid_refs(albedo), Some(&solution.mask))?;
    }

    let mut record = serde_json::json!({
        "variant": args.variant,
        "pixels": solution.stats.pixels,
        "unknowns": solution.stats.unknowns,
        "rows": solution.stats.rows,
        "iterations": solution.stats.iterations,
        "residual": solution.stats.rel_residual,
        "optimality": solution.stats.optimality,
        "wall_ms": solution.stats.wall_ms,
        "lights": { "s": light_json(&s), "t": t.map(|t| light_json(&t)) },
    });

    // score against ground truth when the run directory has it
    let truth_path = args.input.join("truth_height.phmap");
    if truth_path.exists() {
        let z_gt = read_float_map(&truth_path)?.remove(0);
        let normals = read_float_map(&args.input.join("truth_normals.phmap"))?;
        let n_gt = PixelGrid::from_fn(cfg.width, cfg.height, |x, y| {
            [normals[0].get(x, y), normals[1].get(x, y), normals[2].get(x, y)]
        });
        let m = compute_metrics(&solution.z, &z_gt, &n_gt, &solution.mask, cfg.scheme)?;
        record["metrics"] = serde_json::json!({
            "height_rms": m.height_rms,
            "normal_mae_deg": m.normal_mae_deg,
        });
    }
    println!("{record}");
    Ok(())
}

pub fn cmd_albedo(args: AlbedoArgs) -> Result<()> {
    let (cfg, pol) = load_polarisation(&args.input)?;
    let out = args.out.unwrap_or_else(|| args.input.clone());
    fs::create_dir_all(&out)?;
    let height_path =
        args.height.clone().unwrap_or_else(|| args.input.join("height.phmap"));
    let mut z = read_float_map(&height_path)?.remove(0);
    for p in 0..z.len() {
        if !z.at(p).is_finite() {
            z.set_at(p, 0.0);
        }
    }
    let channels = cfg.albedo.channels();
    if cfg.lights.len() < 2 {
        return Err(Error::InvalidInput("albedo recovery expects a two-source capture".into()));
    }
    let i1: Vec<&PixelGrid<f64>> = pol.i_un[..channels].iter().collect();
    let i2: Vec<&PixelGrid<f64>> = pol.i_un[channels..].iter().collect();
    let estimate = photopol::albedo::albedo_pointwise(
        &z,
        &pol.valid,
        cfg.scheme,
        &i1,
        Some(&i2),
        cfg.lights[0],
        Some(cfg.lights[1]),
        None,
    )?;
    let maps = if args.lambda > 0.0 {
        let g = GradientOperator::build(&pol.valid, cfg.scheme)?;
        photopol::albedo::albedo_with_consistency(
            &estimate,
            &i1,
            &z,
            &g,
            cfg.lights[0],
            args.lambda,
            &Default::default(),
        )?
    } else {
        estimate.maps.clone()
    };
    write_float_map(&out.join("albedo.phmap"), &grid_refs(&maps), Some(&pol.valid))?;
    write_png_gray(&out.join("albedo_preview.png"), &maps[0], Some(&pol.valid), 0.0, 1.0)?;
    println!(
        "{}",
        serde_json::json!({
            "channels": maps.len(),
            "defined_pixels": estimate.defined.count(),
            "lambda": args.lambda,
        })
    );
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let est = read_float_map(&args.est)?.remove(0);
    let z_gt = read_float_map(&args.truth.join("truth_height.phmap"))?.remove(0);
    let normals = read_float_map(&args.truth.join("truth_normals.phmap"))?;
    let cfg = load_scene(&args.truth)?;
    let est_mask = mask_from_finite(std::slice::from_ref(&est));
    let gt_mask = mask_from_finite(std::slice::from_ref(&z_gt));
    let mask = est_mask.and(&gt_mask)?;
    let mut est = est;
    let mut z_gt = z_gt;
    for p in 0..est.len() {
        if !est.at(p).is_finite() {
            est.set_at(p, 0.0);
        }
        if !z_gt.at(p).is_finite() {
            z_gt.set_at(p, 0.0);
        }
    }
    let n_gt = PixelGrid::from_fn(z_gt.width(), z_gt.height(), |x, y| {
        let v = [normals[0].get(x, y), normals[1].get(x, y), normals[2].get(x, y)];
        if v.iter().all(|c| c.is_finite()) {
            v
        } else {
            [0.0, 0.0, 1.0]
        }
    });
    let m = compute_metrics(&est, &z_gt, &n_gt, &mask, cfg.scheme)?;
    if args.csv {
        println!("height_rms,normal_mae");
        println!("{},{}", m.height_rms, m.normal_mae_deg);
    } else {
        println!(
            "{}",
            serde_json::json!({ "height_rms": m.height_rms, "normal_mae_deg": m.normal_mae_deg })
        );
    }
    Ok(())
}
