use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use log::info;

use mtsn::data::{filter_language, generate_corpus, load_dataset, save_dataset, subset_fraction, Dataset};
use mtsn::experiments::{
    cosine_analysis, evaluate, export_projection, run_grid, subset_seed, TrainLanguages, Trainer,
};
use mtsn::gradcheck::{run_gradcheck, GradcheckConfig};
use mtsn::model::{load_checkpoint, save_checkpoint, FrameworkRegistry};
use mtsn::Error;

use crate::config::{self, GridRun, TrainRun};
use crate::{AnalyzeArgs, EvalArgs, GenArgs, GradcheckArgs, GridArgs, TrainArgs};

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_usage() => 2,
        Some(_) => 3,
        None => 2,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn check_fraction(f: f64) -> anyhow::Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Spec(format!("fraction {f} outside (0, 1]")).into());
    }
    Ok(())
}

fn select_languages(ds: &Dataset, label: &str) -> anyhow::Result<Dataset> {
    let langs = TrainLanguages::parse(label, ds.languages())?;
    Ok(filter_language(ds, &langs.tags)?)
}

pub fn gen(a: GenArgs) -> anyhow::Result<ExitCode> {
    if let Some(f) = a.train_fraction {
        check_fraction(f)?;
    }
    let overrides = a.config.as_deref().map(config::read_json).transpose()?;
    let mut spec = config::corpus_spec(&a.preset, overrides)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let out = config::out_dir(a.out.out, "gen");
    let (train, test) = generate_corpus(&spec)?;
    let train = match a.train_fraction {
        Some(f) if f < 1.0 => subset_fraction(&train, f, subset_seed(spec.seed, 0))?,
        _ => train,
    };
    let train_path = save_dataset(&train, &out, "train")?;
    let test_path = save_dataset(&test, &out, "test")?;
    config::echo(
        &out,
        &serde_json::json!({ "preset": a.preset, "train_fraction": a.train_fraction, "corpus": spec }),
    )?;
    println!("wrote {} ({} examples)", train_path.display(), train.len());
    println!("wrote {} ({} examples)", test_path.display(), test.len());
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: TrainArgs) -> anyhow::Result<ExitCode> {
    let mut run: TrainRun = config::load_or_default(a.config.as_deref())?;
    run.train_manifest = Some(a.train.clone());
    if let Some(v) = a.model {
        run.framework = v;
    }
    if let Some(v) = a.train_lang {
        run.train_languages = v;
    }
    if let Some(v) = a.fraction {
        run.fraction = v;
    }
    if let Some(v) = a.resume {
        run.resume = Some(v);
    }
    let t = &mut run.train;
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { t.$field = v; } )* };
    }
    set!(alpha, temperature, epochs, batch_size, lr, hidden, seed);
    run.train.validate()?;
    check_fraction(run.fraction)?;
    let registry = FrameworkRegistry::builtin();
    registry.get(&run.framework)?;

    let data = load_dataset(&a.train)?;
    let data = select_languages(&data, &run.train_languages)?;
    let data = if run.fraction < 1.0 {
        subset_fraction(&data, run.fraction, subset_seed(run.train.seed, 0))?
    } else {
        data
    };
    if data.is_empty() {
        bail!(Error::Spec("no training examples after filtering".into()));
    }

    let out = config::out_dir(a.out.out, "train");
    config::echo(&out, &run)?;
    let mut trainer = match &run.resume {
        Some(path) => {
            let ck = load_checkpoint(path, &registry)?;
            let want = run.train.dims_for(&data);
            if ck.model.kind() != run.framework || ck.model.dims() != want {
                bail!(Error::Spec(format!(
                    "checkpoint holds {} {:?}; run wants {} {want:?}",
                    ck.model.kind(),
                    ck.model.dims(),
                    run.framework
                )));
            }
            Trainer::resume(ck, run.train.clone())?
        }
        None => {
            let trainer = Trainer::new(&registry, &run.framework, run.train.dims_for(&data), run.train.clone())?;
            save_checkpoint(
                &out.join("checkpoint_initial.bin"),
                trainer.model(),
                trainer.optimizer(),
                &trainer.meta(),
            )?;
            trainer
        }
    };
    let start = Instant::now();
    let mut history = String::from("epoch,total,distillation,intent\n");
    while trainer.epoch() < run.train.epochs {
        let e = trainer.run_epoch(&data)?;
        history.push_str(&format!("{},{},{},{}\n", e.epoch, e.total, e.distillation, e.intent));
        info!("epoch {} loss {:.5}", e.epoch, e.total);
    }
    let ck_path = out.join("checkpoint.bin");
    save_checkpoint(&ck_path, trainer.model(), trainer.optimizer(), &trainer.meta())?;
    let hist_path = out.join("loss_history.csv");
    fs::write(&hist_path, history).map_err(io_err(&hist_path))?;
    let last = trainer.history().last().copied();
    println!(
        "trained {} on {} examples to epoch {} in {:.1}s; final loss {}",
        run.framework,
        data.len(),
        trainer.epoch(),
        start.elapsed().as_secs_f64(),
        last.map_or("n/a".into(), |l| format!("{:.5}", l.total))
    );
    println!("wrote {}", ck_path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let registry = FrameworkRegistry::builtin();
    let ck = load_checkpoint(&a.checkpoint, &registry)?;
    let test = load_dataset(&a.test)?;
    let label = a.test_lang.as_deref().unwrap_or("both");
    let test = select_languages(&test, label)?;
    let acc = evaluate(ck.model.as_ref(), &test).context("evaluating checkpoint")?;
    let correct: usize = acc.tallies.values().map(|t| t.correct).sum();
    println!(
        "accuracy {:.2}% ({correct}/{}) on {label}",
        acc.combined,
        test.len()
    );
    for (lang, pct) in &acc.per_language {
        println!("  {lang}: {pct:.2}%");
    }
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join("eval.csv");
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        if fresh {
            writeln!(f, "checkpoint,framework,test_languages,examples,correct,accuracy").map_err(io_err(&path))?;
        }
        writeln!(
            f,
            "{},{},{label},{},{correct},{}",
            a.checkpoint.display(),
            ck.model.kind(),
            test.len(),
            acc.combined
        )
        .map_err(io_err(&path))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn grid(a: GridArgs) -> anyhow::Result<ExitCode> {
    let mut run: GridRun = config::load_or_default(a.config.as_deref())?;
    if let Some(v) = a.train {
        run.train_manifest = Some(v);
    }
    if let Some(v) = a.test {
        run.test_manifest = Some(v);
    }
    if let Some(v) = a.preset {
        run.preset = v;
    }
    if let Some(seed) = a.corpus_seed {
        let patch = serde_json::json!({ "seed": seed });
        match &mut run.corpus {
            Some(c) => config::merge(c, patch),
            None => run.corpus = Some(patch),
        }
    }
    let g = &mut run.grid;
    if let Some(v) = a.frameworks {
        g.frameworks = v;
    }
    if let Some(v) = a.train_langs {
        g.train_languages = v;
    }
    if let Some(v) = a.fractions {
        g.fractions = v;
    }
    if let Some(v) = a.seeds {
        g.seeds = v;
    }
    if let Some(v) = a.seed {
        g.seed = v;
    }
    if let Some(v) = a.epochs {
        g.train.epochs = v;
    }
    if let Some(v) = a.hidden {
        g.train.hidden = v;
    }
    if let Some(v) = a.alpha {
        g.train.alpha = v;
    }
    if let Some(v) = a.parallelism {
        g.parallelism = v;
    }
    let registry = FrameworkRegistry::builtin();
    run.grid.validate(&registry)?;

    let (train, test) = match (&run.train_manifest, &run.test_manifest) {
        (Some(tr), Some(te)) => (load_dataset(tr)?, load_dataset(te)?),
        (None, None) => {
            let spec = config::corpus_spec(&run.preset, run.corpus.clone())?;
            run.corpus = Some(serde_json::to_value(&spec)?);
            generate_corpus(&spec)?
        }
        _ => bail!(Error::Spec("give both train and test manifests, or neither".into())),
    };
    let out = config::out_dir(a.out.out, "grid");
    config::echo(&out, &run)?;
    let start = Instant::now();
    let report = run_grid(&registry, &run.grid, &train, &test, Some(&out))?;
    report.write(&out, Some(start.elapsed().as_secs_f64()))?;
    print!("{}", report.table4_accuracy().1);
    if run.grid.fractions.iter().any(|&f| f < 1.0) {
        print!("\n{}", report.table5_fractions().1);
    }
    println!("\nwrote reports to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn analyze(a: AnalyzeArgs) -> anyhow::Result<ExitCode> {
    let registry = FrameworkRegistry::builtin();
    let ck = load_checkpoint(&a.checkpoint, &registry)?;
    let test = load_dataset(&a.test)?;
    let out = config::out_dir(a.out.out, "analyze");
    let final_stats = cosine_analysis(ck.model.as_ref(), &test)?;
    let initial_stats = match &a.initial {
        Some(p) => Some(cosine_analysis(load_checkpoint(p, &registry)?.model.as_ref(), &test)?),
        None => None,
    };
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let path = out.join("cosine.json");
    let json = serde_json::json!({ "initial": initial_stats, "final": final_stats });
    fs::write(&path, serde_json::to_string_pretty(&json)? + "\n").map_err(io_err(&path))?;
    export_projection(ck.model.as_ref(), &test, &out.join("projection.csv"))?;
    if let Some(i) = &initial_stats {
        println!("mean cosine initial {:.4} -> final {:.4}", i.combined, final_stats.combined);
    } else {
        println!("mean cosine {:.4}", final_stats.combined);
    }
    for (lang, c) in &final_stats.per_language {
        println!("  {lang}: {c:.4}");
    }
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> anyhow::Result<ExitCode> {
    if !(a.tol > 0.0) || a.points == 0 {
        bail!(Error::Spec("tolerance must be positive and points at least 1".into()));
    }
    let cfg = GradcheckConfig {
        tol: a.tol,
        points: a.points,
        seed: a.seed,
        inject_fault: a.inject_fault,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    for f in report.failures() {
        println!("FAIL {}: max relative error {:.3e}", f.name, f.max_rel_error);
    }
    println!("{}", report.summary());
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}
