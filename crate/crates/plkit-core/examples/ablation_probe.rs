//! Scratch probe: print per-seed ablation rows for tuning.

use plkit_core::synthworld::{
    run_ablation, NoiseConfig, PipelineParams, RetrainModel, WorldConfig,
};

fn main() {
    let config = WorldConfig::default();
    let mut noise_cfg = NoiseConfig::default();
    let params = PipelineParams::default();
    let mut retrain = RetrainModel::default();
    let mut seeds: Vec<u64> = Vec::new();

    for arg in std::env::args().skip(1) {
        match arg.split_once('=') {
            Some(("fp_mean", v)) => noise_cfg.score_model.fp_mean = v.parse().unwrap(),
            Some(("tp_mean", v)) => noise_cfg.score_model.tp_mean = v.parse().unwrap(),
            Some(("score_sigma", v)) => noise_cfg.score_model.sigma = v.parse().unwrap(),
            Some(("lift", v)) => retrain.covered_score_lift = v.parse().unwrap(),
            Some(("covered_sigma", v)) => retrain.covered_score_sigma = v.parse().unwrap(),
            Some(("discover_max", v)) => retrain.discover_max = v.parse().unwrap(),
            Some(("discover_scale", v)) => retrain.discover_scale = v.parse().unwrap(),
            Some(("discover_score", v)) => retrain.discover_score_mean = v.parse().unwrap(),
            Some(("suppressed_keep", v)) => retrain.suppressed_keep = v.parse().unwrap(),
            Some((k, _)) => panic!("unknown key {k}"),
            None => seeds.push(arg.parse().expect("seed")),
        }
    }
    let noise = noise_cfg.expand(config.n_base, config.n_novel);
    if seeds.is_empty() {
        seeds = (1..=5).collect();
    }

    let mut ok_increase = 0;
    let mut ok_verify_gain = 0;
    let mut ok_ignore = 0;
    for &seed in &seeds {
        let t0 = std::time::Instant::now();
        let out = run_ablation(&config, &noise, &params, &retrain, seed).unwrap();
        let naps: Vec<f64> = out.rows.iter().map(|r| r.nap()).collect();
        let g_src = naps[1] - naps[0];
        let g_ver = naps[2] - naps[1];
        let g_cor = naps[3] - naps[2];
        let noig = out.final_without_ignores.novel_ap;
        let inc = naps.windows(2).all(|w| w[1] > w[0]);
        if inc {
            ok_increase += 1;
        }
        if g_ver > g_src {
            ok_verify_gain += 1;
        }
        if noig < naps[3] {
            ok_ignore += 1;
        }
        println!(
            "seed {seed}: nAP {:.4} -> {:.4} -> {:.4} -> {:.4} | gains src {:+.4} ver {:+.4} cor {:+.4} | no-ign {:.4} | inc={inc} | {}ms",
            naps[0], naps[1], naps[2], naps[3], g_src, g_ver, g_cor, noig,
            t0.elapsed().as_millis()
        );
        println!(
            "         counts pseudo {:?} ignore {:?} | nAP50 {:.3}/{:.3}/{:.3}/{:.3} nAP75 {:.3}/{:.3}/{:.3}/{:.3} bAP {:.3}/{:.3}",
            out.rows.iter().map(|r| r.pseudo_count).collect::<Vec<_>>(),
            out.rows.iter().map(|r| r.ignore_count).collect::<Vec<_>>(),
            out.rows[0].report.novel_ap50,
            out.rows[1].report.novel_ap50,
            out.rows[2].report.novel_ap50,
            out.rows[3].report.novel_ap50,
            out.rows[0].report.novel_ap75,
            out.rows[1].report.novel_ap75,
            out.rows[2].report.novel_ap75,
            out.rows[3].report.novel_ap75,
            out.rows[0].report.base_ap,
            out.rows[3].report.base_ap,
        );
    }
    println!(
        "summary over {} seeds: strict-increase {}/{} | verify>source {}/{} | ignore-helps {}/{}",
        seeds.len(),
        ok_increase,
        seeds.len(),
        ok_verify_gain,
        seeds.len(),
        ok_ignore,
        seeds.len()
    );
}
