use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use se3fm::backbone::{atoms_to_frames, frames_to_atoms, AtomCoords, SequenceRecord};
use se3fm::data::{
    filter_dataset, format_manifest, load_entries, mask_low_plddt, parse_manifest, write_pdb, FilterReport,
    ManifestEntry, Provenance, RejectReason, SequenceStyle, StructureEntry, ToyCorpusSpec, ToyKind, ToyOptions,
};
use se3fm::geometry::{FrameChain, Vec3};
use se3fm::metrics::{
    assign_secondary_with, diversity_reward_with, diversity_stats, greedy_cluster, kabsch_rmsd, novelty_stats,
    sc_rmsd_eval, ss_fractions, ss_string, MotifRegions,
};
use se3fm::model::{read_embeddings, Mat, Model};
use se3fm::sampling::{fold as fold_one, sample_many, scaffold as scaffold_one, ModelField, Motif, TaskSpec};
use se3fm::training::{fit, reft_filter, Checkpoint, StepReport, TrainItem, TrainState};
use se3fm::{seeded_rng, selfcheck as checks, substream};

use crate::config::{LoadedConfig, RunConfig};
use crate::io::{f, list_pdbs, parse_index_spec, parse_sequences, read_pdb, stem};
use crate::run::RunTimer;
use crate::{CliError, Global, SampleFlags};

/// Greedy clustering threshold for the eval summary, TM-score.
const CLUSTER_TM: f64 = 0.5;

fn load_config(g: &Global) -> anyhow::Result<LoadedConfig> {
    let c = LoadedConfig::load(g.config.as_deref(), g.seed)?;
    c.validate()?;
    Ok(c)
}

fn out_dir(out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
    Ok(())
}

fn read_manifest(path: &Path) -> anyhow::Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read manifest {}: {e}", path.display())))?;
    let entries = parse_manifest(&text)?;
    if entries.is_empty() {
        return Err(CliError::data(format!("manifest {} lists no entries", path.display())).into());
    }
    Ok(entries)
}

fn manifest_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::fs::canonicalize(&joined).unwrap_or(joined)
}

fn load_all(manifest: &Path) -> anyhow::Result<(Vec<ManifestEntry>, Vec<StructureEntry>)> {
    let entries = read_manifest(manifest)?;
    let base = manifest_base(manifest);
    let mut out = Vec::with_capacity(entries.len());
    for (id, r) in load_entries(&entries, &base) {
        let e = r.with_context(|| format!("entry {id}"))?;
        e.validate().with_context(|| format!("entry {id}"))?;
        out.push(e);
    }
    Ok((entries, out))
}

fn load_checkpoint(path: &Path) -> anyhow::Result<(Model, Checkpoint)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("checkpoint {}", path.display()))?;
    let model = Model::new(ckpt.model.clone())?;
    if ckpt.state.params.len() != model.n_params() {
        return Err(CliError::data(format!(
            "checkpoint {} holds {} parameters, its model needs {}",
            path.display(),
            ckpt.state.params.len(),
            model.n_params()
        ))
        .into());
    }
    Ok((model, ckpt))
}

fn apply_sample_flags(cfg: &mut RunConfig, flags: &SampleFlags) -> anyhow::Result<()> {
    if let Some(s) = flags.steps {
        cfg.sample.n_steps = s;
    }
    if let Some(a) = flags.anneal {
        cfg.sample.anneal = a;
    }
    cfg.sample.validate()?;
    if flags.n_samples == 0 {
        return Err(CliError::config("--n-samples must be at least 1").into());
    }
    Ok(())
}

/// The external embedding matrix to feed a model of `n` residues.
///
/// Models without an external width take none. Models with one use `given`, or zeros when
/// `allow_zeros` (every residue is hidden anyway in unconditional generation).
fn external_for(model: &Model, n: usize, given: Option<Mat>, allow_zeros: bool) -> anyhow::Result<Option<Mat>> {
    match (model.config().external_dim, given) {
        (None, None) => Ok(None),
        (None, Some(_)) => Err(CliError::config("this checkpoint takes no external embeddings").into()),
        (Some(d), Some(m)) => {
            if m.cols != d || m.rows != n {
                return Err(CliError::config(format!(
                    "external embeddings are {}x{}, expected {n}x{d}",
                    m.rows, m.cols
                ))
                .into());
            }
            Ok(Some(m))
        }
        (Some(d), None) if allow_zeros => Ok(Some(Mat::zeros(n, d))),
        (Some(_), None) => Err(CliError::config("this checkpoint needs --external-embeddings").into()),
    }
}

fn write_chain(timer: &mut RunTimer, path: PathBuf, chain: &FrameChain, seq: &SequenceRecord) -> anyhow::Result<()> {
    let atoms = frames_to_atoms(chain);
    timer.write(path, write_pdb(&atoms, seq, None)?)
}

fn ss_columns(atoms: &AtomCoords, cfg: &RunConfig) -> (String, f64, f64, f64, f64) {
    let labels = assign_secondary_with(atoms, &cfg.filter.secondary);
    let (h, e, c) = ss_fractions(&labels);
    (ss_string(&labels), h, e, c, diversity_reward_with(&labels, &cfg.reward))
}

fn losses_table(reports: &[StepReport]) -> String {
    let mut s = String::from("step\tloss\tot_cost\tidentity_cost\tgrad_norm\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{}\t{:.8e}\t{:.8e}\t{:.8e}\t{:.8e}",
            r.step, r.loss, r.ot_cost, r.identity_cost, r.grad_norm
        );
    }
    s
}

fn log_step(r: &StepReport) {
    if r.step.is_multiple_of(50) || r.step == 1 {
        log::info!(
            "step {:>6}  loss {:.4}  ot {:.2} (identity {:.2})",
            r.step,
            r.loss,
            r.ot_cost,
            r.identity_cost
        );
    }
}

pub fn selfcheck(g: &Global) -> anyhow::Result<()> {
    let results = checks::run_all(g.seed.unwrap_or(0))?;
    let mut failed = 0;
    for c in &results {
        println!("{} {:<40} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(CliError::numeric(format!("{failed} of {} checks failed", results.len())).into());
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

pub fn toy_corpus(
    g: &Global,
    out: &Path,
    length: usize,
    kinds: &str,
    synthetic_fraction: f64,
    propensity: bool,
    jitter: f64,
) -> anyhow::Result<()> {
    let cfg = load_config(g)?;
    let mut timer = RunTimer::start("toy-corpus");
    let mut spec_kinds = Vec::new();
    for part in kinds.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, n) = part
            .split_once(':')
            .ok_or_else(|| CliError::config(format!("bad kind spec {part:?}, expected kind:count")))?;
        let kind: ToyKind = k.trim().parse()?;
        let count: usize = n
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("bad count in {part:?}")))?;
        spec_kinds.push((kind, count));
    }
    if !(0.0..=1.0).contains(&synthetic_fraction) {
        return Err(CliError::config("--synthetic-fraction must lie in [0, 1]").into());
    }
    let spec = ToyCorpusSpec {
        kinds: spec_kinds,
        length,
        options: ToyOptions {
            jitter_deg: jitter,
            sequence: if propensity {
                SequenceStyle::Propensity
            } else {
                SequenceStyle::Uniform
            },
        },
        synthetic_fraction,
    };
    let corpus = se3fm::data::toy_corpus(&spec, cfg.config.seed)?;
    if corpus.is_empty() {
        return Err(CliError::config("toy corpus spec produces no entries").into());
    }
    out_dir(out)?;
    let mut manifest = Vec::with_capacity(corpus.len());
    for e in &corpus {
        let file = format!("{}.pdb", e.id);
        timer.write(out.join(&file), write_pdb(&e.atoms, &e.seq, e.plddt.as_deref())?)?;
        manifest.push(ManifestEntry {
            id: e.id.clone(),
            path: PathBuf::from(file),
            provenance: e.provenance,
            cluster: e.cluster.clone(),
            embeddings: None,
        });
    }
    timer.write(out.join("manifest.tsv"), format_manifest(&manifest))?;
    println!("wrote {} entries to {}", corpus.len(), out.display());
    timer.finish(out, &cfg)
}

#[derive(Serialize)]
struct FilterSummary<'a> {
    #[serde(flatten)]
    report: &'a FilterReport,
    unreadable: BTreeMap<String, String>,
}

pub fn filter(g: &Global, manifest: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(g)?;
    let mut timer = RunTimer::start("filter");
    let entries = read_manifest(manifest)?;
    let base = manifest_base(manifest);
    let loaded = load_entries(&entries, &base);

    let mut readable = Vec::new();
    let mut unreadable = BTreeMap::new();
    for (id, r) in loaded {
        match r.and_then(|e| e.validate().map(|_| e)) {
            Ok(e) => readable.push(e),
            Err(err) => {
                log::warn!("skipping {id}: {err}");
                unreadable.insert(id, err.to_string());
            }
        }
    }
    let (accepted, partial) = filter_dataset(&readable, &cfg.config.filter);

    let mut report = FilterReport {
        masked_residues: partial.masked_residues,
        ..FilterReport::default()
    };
    let mut decisions = partial.decisions.into_iter();
    for e in &entries {
        if unreadable.contains_key(&e.id) {
            report.record(&e.id, Some(RejectReason::Unreadable));
        } else {
            let (id, reason) = decisions.next().expect("one decision per readable entry");
            report.record(&id, reason);
        }
    }

    let by_id: BTreeMap<&str, &ManifestEntry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let kept: Vec<ManifestEntry> = accepted
        .iter()
        .map(|a| {
            let m = by_id[a.entry.id.as_str()];
            ManifestEntry {
                path: resolve(&base, &m.path),
                embeddings: m.embeddings.as_ref().map(|p| resolve(&base, p)),
                ..m.clone()
            }
        })
        .collect();

    out_dir(out)?;
    timer.write(out.join("manifest.tsv"), format_manifest(&kept))?;
    let summary = FilterSummary {
        report: &report,
        unreadable,
    };
    timer.write(
        out.join("filter_report.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!(
        "accepted {} of {} entries ({} residues masked)",
        report.n_accepted, report.n_input, report.masked_residues
    );
    for (reason, n) in &report.rejected {
        println!("  rejected {:<16} {n}", reason.as_str());
    }
    timer.finish(out, &cfg)?;
    if report.n_accepted == 0 {
        return Err(CliError::data("no entries survived filtering").into());
    }
    Ok(())
}

pub fn train(
    g: &Global,
    manifest: &Path,
    out: &Path,
    steps: Option<usize>,
    freeze_seq_encoder: bool,
    external_embeddings: bool,
) -> anyhow::Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(s) = steps {
        cfg.config.train.max_steps = Some(s);
    }
    cfg.config.model.freeze_seq_embedding |= freeze_seq_encoder;
    let mut timer = RunTimer::start("train");
    let (manifest_entries, entries) = load_all(manifest)?;
    let base = manifest_base(manifest);

    let mut externals: Vec<Option<Mat>> = vec![None; entries.len()];
    if external_embeddings {
        for (k, (m, e)) in manifest_entries.iter().zip(&entries).enumerate() {
            let p = m
                .embeddings
                .as_ref()
                .ok_or_else(|| CliError::config(format!("entry {} has no embeddings file", m.id)))?;
            let mat = read_embeddings(&resolve(&base, p)).with_context(|| format!("embeddings of {}", m.id))?;
            if mat.rows != e.len() {
                return Err(CliError::data(format!(
                    "embeddings of {} have {} rows for {} residues",
                    m.id,
                    mat.rows,
                    e.len()
                ))
                .into());
            }
            match cfg.config.model.external_dim {
                Some(d) if d != mat.cols => {
                    return Err(
                        CliError::config(format!("embeddings of {} are {} wide, expected {d}", m.id, mat.cols)).into(),
                    )
                }
                _ => cfg.config.model.external_dim = Some(mat.cols),
            }
            externals[k] = Some(mat);
        }
    } else {
        cfg.config.model.external_dim = None;
    }

    let items = entries
        .iter()
        .zip(externals)
        .map(|(e, ext)| {
            Ok(TrainItem {
                x0: atoms_to_frames(&e.atoms)?,
                seq: e.seq.clone(),
                residue_mask: mask_low_plddt(e, &cfg.config.filter),
                external: ext,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let provenance: Vec<Provenance> = entries.iter().map(|e| e.provenance).collect();

    let model = Model::new(cfg.config.model.clone())?;
    let mut state = TrainState::new(model.init_params(&mut seeded_rng(cfg.config.seed)));
    log::info!(
        "training {} parameters on {} entries (max steps {:?})",
        model.n_params(),
        items.len(),
        cfg.config.train.max_steps
    );
    let mut reports = Vec::new();
    fit(&model, &mut state, &items, &provenance, None, &cfg.config.train, |r| {
        log_step(r);
        reports.push(r.clone());
    })?;

    out_dir(out)?;
    timer.write(out.join("losses.tsv"), losses_table(&reports))?;
    let path = out.join("checkpoint.bin");
    Checkpoint {
        model: cfg.config.model.clone(),
        state,
    }
    .save(&path)?;
    timer.record(path);
    println!(
        "trained {} steps, final loss {}",
        reports.len(),
        reports.last().map(|r| f(r.loss)).unwrap_or_else(|| "n/a".into())
    );
    timer.finish(out, &cfg)
}

pub fn reft(g: &Global, checkpoint: &Path, samples: &Path, out: &Path, steps: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(s) = steps {
        cfg.config.train.max_steps = Some(s);
    }
    let mut timer = RunTimer::start("reft");
    let (model, mut ckpt) = load_checkpoint(checkpoint)?;
    if model.config().external_dim.is_some() {
        return Err(CliError::config("fine-tuning needs a checkpoint without external embeddings").into());
    }
    let files = list_pdbs(samples)?;
    if files.is_empty() {
        return Err(CliError::data(format!("no .pdb files in {}", samples.display())).into());
    }
    let mut items = Vec::with_capacity(files.len());
    let mut rewards = Vec::with_capacity(files.len());
    for p in &files {
        let chain = read_pdb(p)?;
        rewards.push(ss_columns(&chain.atoms, &cfg.config).4);
        items.push(TrainItem::new(atoms_to_frames(&chain.atoms)?, chain.seq));
    }
    let selected = reft_filter(&rewards);
    let kept: Vec<TrainItem> = selected.iter().map(|&i| items[i].clone()).collect();
    let kept_rewards: Vec<f64> = selected.iter().map(|&i| rewards[i]).collect();
    log::info!("fine-tuning on {} of {} samples", kept.len(), files.len());

    ckpt.state.reset_moments();
    let provenance = vec![Provenance::Experimental; kept.len()];
    let mut reports = Vec::new();
    fit(
        &model,
        &mut ckpt.state,
        &kept,
        &provenance,
        Some(&kept_rewards),
        &cfg.config.train,
        |r| {
            log_step(r);
            reports.push(r.clone());
        },
    )?;

    out_dir(out)?;
    let mut table = String::from("id\treward\tselected\n");
    for (k, p) in files.iter().enumerate() {
        let _ = writeln!(
            table,
            "{}\t{}\t{}",
            stem(p),
            f(rewards[k]),
            u8::from(selected.contains(&k))
        );
    }
    timer.write(out.join("rewards.tsv"), table)?;
    timer.write(out.join("losses.tsv"), losses_table(&reports))?;
    let path = out.join("checkpoint.bin");
    ckpt.save(&path)?;
    timer.record(path);
    println!("fine-tuned {} steps on {} samples", reports.len(), kept.len());
    timer.finish(out, &cfg)
}

fn samples_table(rows: &[(String, String, &AtomCoords)], cfg: &RunConfig) -> String {
    let mut s = String::from("id\tsequence\tlength\tss\thelix\tstrand\tcoil\treward\n");
    for (id, seq, atoms) in rows {
        let (ss, h, e, c, r) = ss_columns(atoms, cfg);
        let _ = writeln!(
            s,
            "{id}\t{seq}\t{}\t{ss}\t{}\t{}\t{}\t{}",
            atoms.len(),
            f(h),
            f(e),
            f(c),
            f(r)
        );
    }
    s
}

pub fn sample(g: &Global, checkpoint: &Path, out: &Path, length: usize, flags: &SampleFlags) -> anyhow::Result<()> {
    let mut cfg = load_config(g)?;
    apply_sample_flags(&mut cfg.config, flags)?;
    let mut timer = RunTimer::start("sample");
    if length == 0 {
        return Err(CliError::config("--length must be positive").into());
    }
    let (model, ckpt) = load_checkpoint(checkpoint)?;
    let external = external_for(&model, length, None, true)?;
    let field = ModelField {
        external: external.as_ref(),
        ..ModelField::new(&model, &ckpt.state.params)
    };
    let task = TaskSpec::unconditional(length);
    let chains = sample_many(&field, &task, &cfg.config.sample, flags.n_samples)?;

    out_dir(out)?;
    let mut rows = Vec::new();
    let atoms: Vec<AtomCoords> = chains.iter().map(frames_to_atoms).collect();
    for (i, c) in chains.iter().enumerate() {
        let id = format!("sample_{i:03}");
        write_chain(&mut timer, out.join(format!("{id}.pdb")), c, &task.seq)?;
        rows.push((id, task.seq.to_one_letter(), &atoms[i]));
    }
    timer.write(out.join("samples.tsv"), samples_table(&rows, &cfg.config))?;
    println!("wrote {} samples of length {length}", chains.len());
    timer.finish(out, &cfg)
}

pub fn fold(
    g: &Global,
    checkpoint: &Path,
    sequences: &Path,
    out: &Path,
    external: Option<&Path>,
    flags: &SampleFlags,
) -> anyhow::Result<()> {
    let mut cfg = load_config(g)?;
    apply_sample_flags(&mut cfg.config, flags)?;
    let mut timer = RunTimer::start("fold");
    let text = std::fs::read_to_string(sequences)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", sequences.display())))?;
    let records = parse_sequences(&text)?;
    for r in &records {
        if !r.seq.is_fully_observed() {
            return Err(CliError::config(format!(
                "sequence {} contains masked residues (X); folding needs every residue",
                r.name
            ))
            .into());
        }
    }
    if external.is_some() && records.len() != 1 {
        return Err(CliError::config("--external-embeddings needs a sequence file with exactly one record").into());
    }
    let (model, ckpt) = load_checkpoint(checkpoint)?;
    let given = external.map(read_embeddings).transpose()?;

    out_dir(out)?;
    let mut all_atoms = Vec::new();
    for (k, r) in records.iter().enumerate() {
        let ext = external_for(&model, r.seq.len(), given.clone(), false)?;
        let field = ModelField {
            external: ext.as_ref(),
            ..ModelField::new(&model, &ckpt.state.params)
        };
        let chains = (0..flags.n_samples)
            .into_par_iter()
            .map(|j| {
                let index = (k * flags.n_samples + j) as u64;
                fold_one(
                    &field,
                    &r.seq,
                    &cfg.config.sample,
                    &mut substream(cfg.config.seed, index),
                )
            })
            .collect::<se3fm::Result<Vec<_>>>()?;
        for (j, c) in chains.iter().enumerate() {
            let id = format!("{}_{j:03}", r.name);
            write_chain(&mut timer, out.join(format!("{id}.pdb")), c, &r.seq)?;
            all_atoms.push((id, r.seq.to_one_letter(), frames_to_atoms(c)));
        }
    }
    let rows: Vec<(String, String, &AtomCoords)> =
        all_atoms.iter().map(|(i, s, a)| (i.clone(), s.clone(), a)).collect();
    timer.write(out.join("samples.tsv"), samples_table(&rows, &cfg.config))?;
    println!("folded {} sequences x {} samples", records.len(), flags.n_samples);
    timer.finish(out, &cfg)
}

pub fn scaffold(
    g: &Global,
    checkpoint: &Path,
    motif_pdb: &Path,
    motif_indices: &str,
    length: usize,
    out: &Path,
    flags: &SampleFlags,
) -> anyhow::Result<()> {
    let mut cfg = load_config(g)?;
    apply_sample_flags(&mut cfg.config, flags)?;
    let mut timer = RunTimer::start("scaffold");
    let indices = parse_index_spec(motif_indices)?;
    let chain = read_pdb(motif_pdb)?;
    if chain.atoms.len() != indices.len() {
        return Err(CliError::config(format!(
            "motif has {} residues but --motif-indices lists {}",
            chain.atoms.len(),
            indices.len()
        ))
        .into());
    }
    let frames = atoms_to_frames(&chain.atoms)?;
    let motif = Motif {
        frames: frames.frames.clone(),
        tokens: chain.seq.tokens.clone(),
        indices: indices.clone(),
    };
    let (model, ckpt) = load_checkpoint(checkpoint)?;
    let external = external_for(&model, length, None, true)?;
    let field = ModelField {
        external: external.as_ref(),
        ..ModelField::new(&model, &ckpt.state.params)
    };
    let task = se3fm::sampling::scaffold_task(&motif, length)?;
    let chains = (0..flags.n_samples)
        .into_par_iter()
        .map(|j| {
            scaffold_one(
                &field,
                &motif,
                length,
                &cfg.config.sample,
                &mut substream(cfg.config.seed, j as u64),
            )
        })
        .collect::<se3fm::Result<Vec<_>>>()?;

    let motif_atoms: Vec<Vec3> = frames_to_atoms(&frames)
        .residues
        .iter()
        .flat_map(|r| r[..3].to_vec())
        .collect();
    out_dir(out)?;
    let mut table = String::from("id\tlength\tmotif_rmsd\tss\n");
    for (j, c) in chains.iter().enumerate() {
        let id = format!("scaffold_{j:03}");
        write_chain(&mut timer, out.join(format!("{id}.pdb")), c, &task.seq)?;
        let atoms = frames_to_atoms(c);
        let placed: Vec<Vec3> = indices.iter().flat_map(|&i| atoms.residues[i][..3].to_vec()).collect();
        let rmsd = kabsch_rmsd(&placed, &motif_atoms)?;
        let (ss, ..) = ss_columns(&atoms, &cfg.config);
        let _ = writeln!(table, "{id}\t{length}\t{:.3e}\t{ss}", rmsd);
    }
    timer.write(out.join("scaffolds.tsv"), table)?;
    println!("wrote {} scaffolds of length {length}", chains.len());
    timer.finish(out, &cfg)
}

#[derive(Serialize)]
struct Designability {
    n_evaluated: usize,
    designable_fraction: f64,
    mean_sc_rmsd: f64,
    motif_success_fraction: Option<f64>,
}

#[derive(Serialize)]
struct Novelty {
    n_reference: usize,
    novel_fraction: f64,
    mean_max_tm: f64,
}

#[derive(Serialize)]
struct EvalSummary {
    n_samples: usize,
    mean_length: f64,
    mean_helix: f64,
    mean_strand: f64,
    mean_coil: f64,
    mean_reward: f64,
    /// Mean pairwise TM-score; only when every sample has the same length.
    mean_pairwise_tm: Option<f64>,
    cluster_tm_threshold: f64,
    n_clusters: usize,
    novelty: Option<Novelty>,
    designability: Option<Designability>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn eval(
    g: &Global,
    samples: &Path,
    out: &Path,
    refolds: Option<&Path>,
    reference: Option<&Path>,
    motif_indices: Option<&str>,
) -> anyhow::Result<()> {
    let cfg = load_config(g)?;
    let mut timer = RunTimer::start("eval");
    let files = list_pdbs(samples)?;
    if files.is_empty() {
        return Err(CliError::data(format!("no .pdb files in {}", samples.display())).into());
    }
    let ids: Vec<String> = files.iter().map(|p| stem(p)).collect();
    let chains = files.iter().map(|p| read_pdb(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let cas: Vec<Vec<Vec3>> = chains.iter().map(|c| c.atoms.ca()).collect();
    let ss: Vec<_> = chains.iter().map(|c| ss_columns(&c.atoms, &cfg.config)).collect();

    let motif = motif_indices.map(parse_index_spec).transpose()?;
    let mut verdicts = Vec::with_capacity(chains.len());
    if let Some(dir) = refolds {
        for (id, c) in ids.iter().zip(&chains) {
            let sub = dir.join(id);
            let files: Vec<PathBuf> = if sub.is_dir() {
                list_pdbs(&sub)?
                    .into_iter()
                    .filter(|p| stem(p).starts_with("refold_"))
                    .collect()
            } else {
                Vec::new()
            };
            if files.is_empty() {
                log::warn!("no refolds for {id}");
                verdicts.push(None);
                continue;
            }
            let refolded = files
                .iter()
                .map(|p| read_pdb(p).map(|r| r.atoms))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let regions = motif.as_ref().map(|m| MotifRegions::from_motif(m, c.atoms.len()));
            verdicts.push(Some(
                sc_rmsd_eval(&c.atoms, &refolded, regions.as_ref()).with_context(|| id.clone())?,
            ));
        }
    } else {
        verdicts.resize(chains.len(), None);
    }

    let novelty = match reference {
        Some(m) => {
            let (_, refs) = load_all(m)?;
            let ref_ca: Vec<Vec<Vec3>> = refs.iter().map(|e| e.atoms.ca()).collect();
            Some((ref_ca.len(), novelty_stats(&cas, &ref_ca)?))
        }
        None => None,
    };

    let same_length = cas.iter().all(|c| c.len() == cas[0].len());
    let pairwise = if same_length && cas.len() >= 2 {
        Some(diversity_stats(&cas)?)
    } else {
        None
    };
    let clusters = greedy_cluster(&cas, CLUSTER_TM)?;

    let evaluated: Vec<_> = verdicts.iter().flatten().collect();
    let designability = (!evaluated.is_empty()).then(|| Designability {
        n_evaluated: evaluated.len(),
        designable_fraction: mean(evaluated.iter().map(|v| f64::from(u8::from(v.designable)))),
        mean_sc_rmsd: mean(evaluated.iter().map(|v| v.sc_rmsd)),
        motif_success_fraction: motif.as_ref().map(|_| {
            mean(
                evaluated
                    .iter()
                    .map(|v| f64::from(u8::from(v.motif.as_ref().is_some_and(|m| m.success)))),
            )
        }),
    });
    let summary = EvalSummary {
        n_samples: chains.len(),
        mean_length: mean(chains.iter().map(|c| c.atoms.len() as f64)),
        mean_helix: mean(ss.iter().map(|s| s.1)),
        mean_strand: mean(ss.iter().map(|s| s.2)),
        mean_coil: mean(ss.iter().map(|s| s.3)),
        mean_reward: mean(ss.iter().map(|s| s.4)),
        mean_pairwise_tm: pairwise,
        cluster_tm_threshold: CLUSTER_TM,
        n_clusters: clusters.n_clusters,
        novelty: novelty.as_ref().map(|(n, s)| Novelty {
            n_reference: *n,
            novel_fraction: s.novel_fraction,
            mean_max_tm: s.mean_max_tm,
        }),
        designability,
    };

    let mut table = String::from("id\tlength\tss\thelix\tstrand\tcoil\treward\tcluster\tmax_ref_tm\tsc_rmsd\tdesignable\tmotif_rmsd\tmotif_success\n");
    let na = || "NA".to_string();
    for (k, id) in ids.iter().enumerate() {
        let (s, h, e, c, r) = &ss[k];
        let v = verdicts[k].as_ref();
        let m = v.and_then(|v| v.motif.as_ref());
        let _ = writeln!(
            table,
            "{id}\t{}\t{s}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            chains[k].atoms.len(),
            f(*h),
            f(*e),
            f(*c),
            f(*r),
            clusters.assignments[k],
            novelty.as_ref().map(|(_, n)| f(n.max_tm[k])).unwrap_or_else(na),
            v.map(|v| f(v.sc_rmsd)).unwrap_or_else(na),
            v.map(|v| u8::from(v.designable).to_string()).unwrap_or_else(na),
            m.map(|m| f(m.motif_rmsd)).unwrap_or_else(na),
            m.map(|m| u8::from(m.success).to_string()).unwrap_or_else(na),
        );
    }

    out_dir(out)?;
    timer.write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    timer.write(out.join("metrics.tsv"), table)?;
    println!(
        "{} samples: helix {:.3} strand {:.3} coil {:.3}, {} clusters",
        summary.n_samples, summary.mean_helix, summary.mean_strand, summary.mean_coil, summary.n_clusters
    );
    timer.finish(out, &cfg)
}
