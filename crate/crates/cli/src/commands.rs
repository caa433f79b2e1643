//! Implementations of the subcommands: thin orchestration over the library.

use crate::config::Resolved;
use crate::{data, numeric, usage, CmdResult};
use anyhow::{anyhow, Context};
use bmdr_core::bmdr::build_snr_bmdr_table;
use bmdr_core::channel::{
    generate_condition_spread, load_channels, save_channels, select_by_condition_number,
};
use bmdr_core::cnn::{
    load_model, predict, save_model, train, CnnModel, LossMode, Precision, TrainPair,
};
use bmdr_core::coding::{cer_simulate, load_alist, peg_ldpc, Interleaver};
use bmdr_core::dataset::{
    export_csv, generate_labels, label_stats, load_dataset, save_dataset, split_dataset,
    FeatureRecord,
};
use bmdr_core::detect::DetectorSpec;
use bmdr_core::linalg::condition_number_db;
use bmdr_core::report::{
    error_percentiles, save_percentiles, sequence_error_percentiles, write_csv_with_provenance,
};
use bmdr_core::rng::{Purpose, RngStream};
use std::path::Path;

pub fn gen_channels(cfg: &Resolved, out: &Path) -> CmdResult {
    let rng = RngStream::new(cfg.seed);
    let pool_size = cfg.channel_count * cfg.pool_factor;
    println!(
        "generating {pool_size} candidates for {} stratified channels in [{}, {}] dB ({:?} profile)",
        cfg.channel_count, cfg.strat_low_db, cfg.strat_high_db, cfg.profile
    );
    let pool = generate_condition_spread(cfg.system.n_r, &cfg.system.users, pool_size, &rng);
    let per_bin = cfg.channel_count.div_ceil(cfg.bins);
    let sel = select_by_condition_number(
        &pool,
        cfg.strat_low_db,
        cfg.strat_high_db,
        cfg.bins,
        per_bin,
        cfg.lenient,
    )
    .map_err(data)?;
    if !sel.shortfall.is_empty() {
        let missing: usize = sel.shortfall.iter().map(|(_, m)| m).sum();
        println!("warning: {missing} channels short across {} bins", sel.shortfall.len());
    }

    // Condition-number histogram.
    let width = (cfg.strat_high_db - cfg.strat_low_db) / cfg.bins as f64;
    let mut hist = vec![0usize; cfg.bins];
    for ch in &sel.channels {
        if let Ok(c) = condition_number_db(&ch.h) {
            if c.is_finite() && c >= cfg.strat_low_db && c < cfg.strat_high_db {
                hist[(((c - cfg.strat_low_db) / width) as usize).min(cfg.bins - 1)] += 1;
            }
        }
    }
    println!("condition-number histogram ({} channels):", sel.channels.len());
    for (i, &count) in hist.iter().enumerate() {
        let lo = cfg.strat_low_db + i as f64 * width;
        println!("  [{:6.2}, {:6.2}) dB: {}", lo, lo + width, count);
    }

    save_channels(&sel.channels, cfg.system.n_r, out).map_err(data)?;
    println!("wrote {} channels to {}", sel.channels.len(), out.display());
    Ok(())
}

fn check_channels_match(
    cfg: &Resolved,
    n_r: usize,
    channels: &[bmdr_core::channel::ChannelRealization],
) -> CmdResult {
    if n_r != cfg.system.n_r {
        return Err(usage(anyhow!(
            "channel file has n_r = {n_r}, config system has n_r = {}",
            cfg.system.n_r
        )));
    }
    if let Some(ch) = channels.first() {
        if ch.h.cols != cfg.system.total_streams() {
            return Err(usage(anyhow!(
                "channel file has {} streams, config system has {}",
                ch.h.cols,
                cfg.system.total_streams()
            )));
        }
    }
    Ok(())
}

pub fn gen_dataset(
    cfg: &Resolved,
    channels_path: &Path,
    out: &Path,
    detector_override: Option<&str>,
    csv: Option<&Path>,
) -> CmdResult {
    let (n_r, channels) = load_channels(channels_path).map_err(data)?;
    check_channels_match(cfg, n_r, &channels)?;
    let spec: DetectorSpec = match detector_override {
        Some(s) => s.parse().map_err(|e| usage(anyhow!("{e}")))?,
        None => cfg.detector.clone(),
    };
    let det = spec.build();
    println!(
        "generating labels: {} channels x N_p = {} (N_samp = {}, detector {})",
        channels.len(),
        cfg.n_p,
        cfg.n_samp,
        det.name()
    );
    let rng = RngStream::new(cfg.seed);
    let report =
        generate_labels(&channels, &cfg.system, det.as_ref(), cfg.n_samp, cfg.n_p, &rng)
            .map_err(numeric)?;
    if !report.skipped_channels.is_empty() {
        println!(
            "warning: skipped {} rank-deficient channels: {:?}",
            report.skipped_channels.len(),
            report.skipped_channels
        );
    }
    let (mean, std) = label_stats(&report.dataset.records);
    println!(
        "{} records; label mean {:.4}, std {:.4}",
        report.dataset.records.len(),
        mean,
        std
    );
    save_dataset(&report.dataset, out).map_err(data)?;
    println!("wrote dataset to {}", out.display());
    if let Some(csv_path) = csv {
        export_csv(&report.dataset, csv_path).map_err(data)?;
        println!("wrote CSV export to {}", csv_path.display());
    }
    Ok(())
}

fn pairs_for_user(records: &[FeatureRecord], user: usize) -> Vec<TrainPair> {
    records
        .iter()
        .map(|r| TrainPair { features: r.features.clone(), label: r.labels[user] })
        .collect()
}

pub fn train_cmd(
    cfg: &Resolved,
    dataset_path: &Path,
    out_model: &Path,
    history_path: Option<&Path>,
    user_override: Option<usize>,
) -> CmdResult {
    let ds = load_dataset(dataset_path).map_err(data)?;
    let user = user_override.unwrap_or(cfg.train_user);
    if user >= ds.meta.users.len() {
        return Err(usage(anyhow!(
            "user {user} out of range; dataset has {} users",
            ds.meta.users.len()
        )));
    }
    let (train_recs, val_recs, test_recs) =
        split_dataset(&ds.records, cfg.split, &RngStream::new(cfg.seed)).map_err(data)?;
    println!(
        "split: {} train / {} val / {} test records",
        train_recs.len(),
        val_recs.len(),
        test_recs.len()
    );
    let train_pairs = pairs_for_user(&train_recs, user);
    let val_pairs = pairs_for_user(&val_recs, user);

    let mut tcfg = cfg.train.clone();
    if tcfg.loss_mode == LossMode::Normalized
        && train_pairs.iter().chain(val_pairs.iter()).any(|p| p.label == 0.0)
    {
        println!("zero-valued labels present: falling back to the absolute loss");
        tcfg.loss_mode = LossMode::Absolute;
    }

    let side = train_pairs
        .first()
        .map(|p| p.features.rows)
        .ok_or_else(|| usage(anyhow!("training split is empty")))?;
    let model = CnnModel::new_random(side, &RngStream::new(cfg.seed));
    println!(
        "training {}-parameter model (user {user}, {:?} loss, max {} epochs)",
        model.param_count(),
        tcfg.loss_mode,
        tcfg.max_epochs
    );
    let (trained, history) = train(model, &train_pairs, &val_pairs, &tcfg).map_err(numeric)?;
    if let Some(last) = history.epochs.last() {
        println!(
            "stopped after {} epochs; best epoch {} (train {:.4}, val {:.4})",
            history.epochs.len(),
            history.best_epoch,
            last.train_loss,
            last.val_loss
        );
    }
    save_model(&trained, out_model, Precision::F64).map_err(data)?;
    println!("wrote model to {}", out_model.display());
    if let Some(hp) = history_path {
        history.save_csv(hp).map_err(data)?;
        println!("wrote history to {}", hp.display());
    }
    Ok(())
}

pub fn predict_cmd(
    cfg: &Resolved,
    model_path: &Path,
    dataset_path: &Path,
    out: &Path,
    user_override: Option<usize>,
) -> CmdResult {
    let model = load_model(model_path).map_err(data)?;
    let ds = load_dataset(dataset_path).map_err(data)?;
    let user = user_override.unwrap_or(cfg.train_user);
    if user >= ds.meta.users.len() {
        return Err(usage(anyhow!(
            "user {user} out of range; dataset has {} users",
            ds.meta.users.len()
        )));
    }
    let rows: Vec<Vec<String>> = ds
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = predict(&model, &r.features).map_err(numeric)?;
            Ok(vec![
                i.to_string(),
                r.channel_id.to_string(),
                format!("{}", r.labels[user]),
                format!("{p}"),
            ])
        })
        .collect::<Result<_, _>>()?;
    write_csv_with_provenance(
        out,
        &cfg.config_hash,
        &["record", "channel_id", "label", "prediction"],
        &rows,
    )
    .map_err(data)?;
    println!("wrote {} predictions to {}", rows.len(), out.display());
    Ok(())
}

/// Parse a predictions CSV back into (labels, predictions).
pub fn parse_predictions(path: &Path) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    let mut label_col = None;
    let mut pred_col = None;
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if label_col.is_none() {
            label_col = cells.iter().position(|&c| c == "label");
            pred_col = cells.iter().position(|&c| c == "prediction");
            if label_col.is_none() || pred_col.is_none() {
                anyhow::bail!("{}: missing label/prediction columns", path.display());
            }
            continue;
        }
        let l: f64 = cells[label_col.unwrap()].parse()?;
        let p: f64 = cells[pred_col.unwrap()].parse()?;
        labels.push(l);
        preds.push(p);
    }
    Ok((labels, preds))
}

pub fn percentiles_cmd(cfg: &Resolved, input: &Path, out: &Path, absolute: bool) -> CmdResult {
    let (labels, preds) = parse_predictions(input).map_err(data)?;
    let table = error_percentiles(&labels, &preds, absolute).map_err(data)?;
    println!(
        "{} records; median error {:.4}, 90th percentile {:.4}",
        labels.len(),
        table.value_at(50.0),
        table.value_at(90.0)
    );
    save_percentiles(&table, out, &cfg.config_hash).map_err(data)?;
    println!("wrote percentile table to {}", out.display());
    Ok(())
}

pub fn seq_errors_cmd(
    cfg: &Resolved,
    input: &Path,
    n_seq_list: &[usize],
    n_draws: usize,
    out_prefix: &Path,
) -> CmdResult {
    let (labels, preds) = parse_predictions(input).map_err(data)?;
    let rng = RngStream::new(cfg.seed);
    for &n_seq in n_seq_list {
        let table = sequence_error_percentiles(&labels, &preds, n_seq, n_draws, &rng)
            .map_err(data)?;
        let out = out_prefix.with_file_name(format!(
            "{}_n{}.csv",
            out_prefix.file_name().and_then(|s| s.to_str()).unwrap_or("seq"),
            n_seq
        ));
        println!(
            "n_seq = {n_seq}: median {:.4}, 90th percentile {:.4}",
            table.value_at(50.0),
            table.value_at(90.0)
        );
        save_percentiles(&table, &out, &cfg.config_hash).map_err(data)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn cer_cmd(
    cfg: &Resolved,
    channels_path: &Path,
    out_dir: &Path,
    detector_override: Option<&str>,
) -> CmdResult {
    let (n_r, channels) = load_channels(channels_path).map_err(data)?;
    check_channels_match(cfg, n_r, &channels)?;
    let code = match &cfg.cer_code_alist {
        Some(path) => load_alist(path).map_err(data)?,
        None => peg_ldpc(648, 216, 3),
    };
    println!("code: ({}, {}), rate {:.3}", code.n, code.k, code.k as f64 / code.n as f64);
    let interleaver = Interleaver::new(code.n, cfg.cer_interleaver_seed);
    std::fs::create_dir_all(out_dir).map_err(|e| data(anyhow!(e)))?;

    let detectors: Vec<DetectorSpec> = match detector_override {
        Some(s) => vec![s.parse().map_err(|e| usage(anyhow!("{e}")))?],
        None => cfg.cer_detectors.clone(),
    };
    for spec in &detectors {
        let det = spec.build();
        println!(
            "simulating {} codewords per point over {:?} dB with {}",
            cfg.cer_n_codewords,
            cfg.cer_rho_grid_db,
            det.name()
        );
        let points = cer_simulate(
            &channels,
            &cfg.system,
            &code,
            &interleaver,
            det.as_ref(),
            &cfg.cer_rho_grid_db,
            cfg.cer_n_codewords,
            cfg.cer_bp_max_iters,
            cfg.cer_bmdr_n_samp,
            &RngStream::new(cfg.seed),
        )
        .map_err(numeric)?;

        let tag = spec.to_string().replace([':', '='], "-");
        for u in 0..cfg.system.n_users() {
            let rows: Vec<Vec<String>> = points
                .iter()
                .map(|p| {
                    let uc = &p.users[u];
                    vec![
                        format!("{}", p.rho_db),
                        format!("{}", uc.cer),
                        format!("{}", uc.ci_low),
                        format!("{}", uc.ci_high),
                        format!("{}", uc.bmdr.value),
                    ]
                })
                .collect();
            let out = out_dir.join(format!("cer_{tag}_user{u}.csv"));
            write_csv_with_provenance(
                &out,
                &cfg.config_hash,
                &["rho_db", "cer", "ci_low", "ci_high", "bmdr_mean"],
                &rows,
            )
            .map_err(data)?;
            println!("wrote {}", out.display());
            // Monotonicity check with Wilson intervals: flag points whose
            // CER rises beyond confidence-interval overlap.
            for w in points.windows(2) {
                let (a, b) = (&w[0].users[u], &w[1].users[u]);
                if b.ci_low > a.ci_high {
                    println!(
                        "warning: user {u} CER rises from {:.3} to {:.3} between {} and {} dB",
                        a.cer, b.cer, w[0].rho_db, w[1].rho_db
                    );
                }
            }
        }
    }
    Ok(())
}

pub fn snr_table_cmd(cfg: &Resolved, out_dir: &Path, ms: Option<Vec<usize>>) -> CmdResult {
    std::fs::create_dir_all(out_dir).map_err(|e| data(anyhow!(e)))?;
    let ms = ms.unwrap_or_else(|| {
        let mut v: Vec<usize> = cfg
            .system
            .users
            .iter()
            .map(|u| u.constellation.bits_per_symbol)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    });
    for m in ms {
        let c = bmdr_core::modem::build_qam(m).map_err(|e| usage(anyhow!("{e}")))?;
        let rng = RngStream::new(cfg.seed).substream(Purpose::Init, m as u64);
        println!(
            "building SNR-BMDR table for m = {m} over [{:.1}, {:.1}] dB ({} samples/point)",
            cfg.table_grid[0],
            cfg.table_grid[cfg.table_grid.len() - 1],
            cfg.table_n_samp
        );
        let table =
            build_snr_bmdr_table(&c, &cfg.table_grid, cfg.table_n_samp, &rng).map_err(numeric)?;
        let path = out_dir.join(format!("snr_bmdr_m{m}.sbmt"));
        table.save(&path).map_err(data)?;
        let lo = table.bmdr.first().unwrap();
        let hi = table.bmdr.last().unwrap();
        println!("wrote {} (ends {lo:.4} .. {hi:.4})", path.display());
    }
    Ok(())
}


pub fn oracles_cmd(filter: Option<&str>, out: Option<&Path>, hash: &str) -> CmdResult {
    let reports = bmdr_core::oracles::run_oracles(filter);
    if reports.is_empty() {
        return Err(usage(anyhow!("filter matched no oracles")));
    }
    let mut all_pass = true;
    for r in &reports {
        println!(
            "{} {}: value {:.6e} vs reference {:.6e} (tol {:.1e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.reference,
            r.tolerance
        );
        all_pass &= r.passed;
    }
    if let Some(path) = out {
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.name.clone(),
                    format!("{:016x}", r.inputs_hash),
                    format!("{}", r.reference),
                    format!("{}", r.value),
                    format!("{}", r.tolerance),
                    r.passed.to_string(),
                ]
            })
            .collect();
        write_csv_with_provenance(
            path,
            hash,
            &["oracle", "inputs_hash", "reference", "value", "tolerance", "passed"],
            &rows,
        )
        .map_err(data)?;
        println!("wrote report to {}", path.display());
    }
    if !all_pass {
        return Err(numeric(anyhow!("oracle failures detected")));
    }
    Ok(())
}
