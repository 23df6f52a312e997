//! The full evaluation grid: {uniform, checkerboard} albedo x {known,
//! estimated} lighting x three noise levels x five methods, one CSV row
//! per cell. Cell seeds derive from the master seed, so a fixed seed gives
//! byte-identical CSVs (wall times are opt-in).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;

use photopol::constraints::{assemble, AssembleOptions, MethodVariant};
use photopol::diff::DiffScheme;
use photopol::error::{Error, Result};
use photopol::lightest::{ambiguous_gradients, estimate_lights, resolve_ambiguity, LightEstimationOptions};
use photopol::metrics::compute_metrics;
use photopol::poldecomp::{fit_multichannel, FitOptions, PolarisationImage};
use photopol::rng;
use photopol::solver::{
    solve_height, solve_prop13, GradientOperator, HeightSolution, Prop13Options, SolveOptions,
};
use photopol::synth::{render_stack, AlbedoKind, CapturedStack, SceneConfig, SurfaceKind};
use photopol::{PixelGrid, RefractiveIndex, UnitVector3};

use crate::Table2Args;

const SIGMAS: [f64; 3] = [0.0, 0.005, 0.02];
const METHODS: [&str; 5] = ["srt16", "prop1", "prop2", "prop3", "prop13"];
const COLOURS: usize = 3;

struct Cell {
    setting: &'static str,
    lighting: &'static str,
    method: &'static str,
    sigma: f64,
    height_rms: f64,
    normal_mae: f64,
    wall_ms: f64,
}

fn protocol_scene(args: &Table2Args, albedo: AlbedoKind, sigma: f64, seed: u64) -> SceneConfig {
    SceneConfig {
        width: args.size,
        height: args.size,
        surface: SurfaceKind::GaussianPeak { amplitude: args.amplitude, width: args.peak_width },
        mask_radius: Some(args.mask_radius),
        albedo,
        lights: vec![
            UnitVector3::new(1.0, 0.0, 5.0).expect("static"),
            UnitVector3::new(-1.0, -2.0, 7.0).expect("static"),
        ],
        viewer: UnitVector3::Z,
        eta: RefractiveIndex::new(1.5).expect("static"),
        polariser_angles: SceneConfig::uniform_angles_deg(10.0),
        noise_sigma: sigma,
        bit_depth: Some(8),
        seed,
        scheme: DiffScheme::Forward,
    }
}

fn decompose(stack: &CapturedStack) -> Result<PolarisationImage> {
    let mut series = Vec::new();
    for l in 0..stack.n_lights() {
        for c in 0..stack.colour_channels {
            series.push(stack.angle_series(l, c));
        }
    }
    let (pol, _) =
        fit_multichannel(&series, &stack.angles, &stack.mask, None, &FitOptions::default())?;
    Ok(pol)
}

fn solve_variant(
    method: &str,
    pol: &PolarisationImage,
    g: &GradientOperator,
    s: UnitVector3,
    t: UnitVector3,
    cfg: &SceneConfig,
) -> Result<HeightSolution> {
    let asm = AssembleOptions { light_split: Some(COLOURS), ..Default::default() };
    if method == "prop13" {
        let res = solve_prop13(
            pol,
            None,
            s,
            t,
            cfg.viewer,
            cfg.eta,
            None,
            g,
            &asm,
            &Prop13Options::default(),
        )?;
        return Ok(res.height);
    }
    let variant = MethodVariant::parse(method)?;
    let ones = [PixelGrid::filled(cfg.width, cfg.height, 1.0)];
    let field = assemble(
        variant,
        pol,
        None,
        s,
        Some(t),
        cfg.viewer,
        variant.needs_albedo().then_some(&ones[..]),
        None,
        cfg.eta,
        &asm,
    )?;
    solve_height(&field, g, &SolveOptions::default())
}

pub fn run(args: Table2Args) -> Result<()> {
    let mut cells: Vec<Cell> = Vec::new();
    let mut stats_lines: Vec<String> = Vec::new();

    for (setting_idx, setting) in ["uniform", "checkerboard"].iter().enumerate() {
        let albedo = match setting_idx {
            0 => AlbedoKind::Uniform { levels: vec![1.0; COLOURS] },
            _ => AlbedoKind::Checkerboard {
                low: vec![0.4, 0.55, 0.3],
                high: vec![1.0, 0.85, 0.95],
                square: 8,
            },
        };
        for (sigma_idx, &sigma) in SIGMAS.iter().enumerate() {
            let cell_seed = rng::mix(args.seed, (setting_idx * SIGMAS.len() + sigma_idx) as u64);
            let cfg = protocol_scene(&args, albedo.clone(), sigma, cell_seed);
            let stack = render_stack(&cfg)?;
            let pol = decompose(&stack)?;
            let g = GradientOperator::build(&pol.valid, cfg.scheme)?;

            // one estimation per (setting, sigma), shared by every method
            let grads = ambiguous_gradients(&pol, cfg.eta);
            let opts = LightEstimationOptions { seed: cell_seed, ..Default::default() };
            let est = estimate_lights(&pol, None, Some(COLOURS), &grads, &opts)?;
            let asm = AssembleOptions { light_split: Some(COLOURS), ..Default::default() };
            let resolved = resolve_ambiguity(&est, |s, t| {
                let field = assemble(
                    MethodVariant::Prop1,
                    &pol,
                    None,
                    s,
                    Some(t),
                    cfg.viewer,
                    None,
                    None,
                    cfg.eta,
                    &asm,
                )?;
                solve_height(&field, &g, &SolveOptions::default())
            })?;

            for (lighting, s, t) in [
                ("known", cfg.lights[0], cfg.lights[1]),
                ("estimated", resolved.s, resolved.t),
            ] {
                for method in METHODS {
                    let start = std::time::Instant::now();
                    let sol = solve_variant(method, &pol, &g, s, t, &cfg)?;
                    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                    let m = compute_metrics(
                        &sol.z,
                        &stack.truth.height,
                        &stack.truth.normals,
                        &sol.mask,
                        cfg.scheme,
                    )?;
                    stats_lines.push(
                        serde_json::json!({
                            "setting": setting,
                            "lighting": lighting,
                            "method": method,
                            "sigma": sigma,
                            "pixels": sol.stats.pixels,
                            "rows": sol.stats.rows,
                            "iterations": sol.stats.iterations,
                            "residual": sol.stats.rel_residual,
                            "wall_ms": sol.stats.wall_ms,
                        })
                        .to_string(),
                    );
                    cells.push(Cell {
                        setting,
                        lighting,
                        method,
                        sigma,
                        height_rms: m.height_rms,
                        normal_mae: m.normal_mae_deg,
                        wall_ms,
                    });
                    eprintln!(
                        "{setting}/{lighting}/{method} sigma={sigma}: rms={:.3} mae={:.2}",
                        m.height_rms, m.normal_mae_deg
                    );
                }
            }
        }
    }

    let mut csv = String::new();
    if args.timings {
        csv.push_str("setting,lighting,method,sigma,height_rms,normal_mae,wall_ms\n");
    } else {
        csv.push_str("setting,lighting,method,sigma,height_rms,normal_mae\n");
    }
    for c in &cells {
        write!(
            csv,
            "{},{},{},{},{:.6},{:.6}",
            c.setting, c.lighting, c.method, c.sigma, c.height_rms, c.normal_mae
        )
        .expect("string write");
        if args.timings {
            write!(csv, ",{:.1}", c.wall_ms).expect("string write");
        }
        csv.push('\n');
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&args.out, csv)?;

    if let Some(stats_path) = &args.stats {
        let mut f = fs::File::create(stats_path)?;
        for line in &stats_lines {
            writeln!(f, "{line}").map_err(Error::Io)?;
        }
    }
    println!(
        "{}",
        serde_json::json!({ "csv": args.out, "cells": cells.len(), "seed": args.seed })
    );
    Ok(())
}
