//! One function per subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cfur::curve::TradeoffCurve;
use cfur::data::{load_dataset, load_tabular_split, save_dataset, LabeledDataset};
use cfur::distributions::{map_accuracy_closed_form, sample_labeled, GaussianMixtureSpec};
use cfur::dp::{epsilon_table, noise_registry};
use cfur::experiment::{
    encode_dataset, eval_rng, evaluate_downstream, fair_sweep, fair_sweep_on, gmm_sweep_with, point_rng, sample_rngs,
    train_representation, ADVERSARY_STREAM, ENCODER_STREAM, TARGET_STREAM, TRAIN_STREAM,
};
use cfur::metrics::{adversary_accuracy, fairness_report, majority_rate};
use cfur::mi::{embedding_mi, mi_with_discrete_label, pca_project, SampleCloud};
use cfur::nn::{MlpModel, MlpSpec};
use cfur::theory::{frontier, solve_water_filling};
use cfur::trainer::{
    distortion, predictor_input, train_fair_classifier, train_task_aware, EncoderModel, FairnessCriterion,
    TrainConfig, TrainMode,
};
use serde_json::json;

use crate::config::{Config, EncoderKind, SweepKind};

/// Where the data of a run came from.
struct Data {
    train: LabeledDataset,
    test: Option<LabeledDataset>,
    /// Set when the data was sampled from the configured mixture.
    spec: Option<GaussianMixtureSpec>,
}

fn load_data(cfg: &Config) -> anyhow::Result<Data> {
    let d = &cfg.data;
    if let Some(path) = &d.train {
        let train = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
        let test = match &d.test {
            Some(p) => Some(load_dataset(p).with_context(|| format!("loading {}", p.display()))?),
            None => None,
        };
        return Ok(Data { train, test, spec: None });
    }
    if let Some(path) = &d.tabular {
        let fraction = d.test_fraction.unwrap_or(0.2);
        let (train, test, _) = load_tabular_split(path, &d.schema, fraction, &mut sample_rngs(cfg.seed).0)
            .with_context(|| format!("loading {}", path.display()))?;
        return Ok(Data {
            train,
            test: Some(test),
            spec: None,
        });
    }
    let spec = cfg.gmm.spec()?;
    let (mut a, mut b) = sample_rngs(cfg.seed);
    Ok(Data {
        train: sample_labeled(&spec, cfg.gmm.train_size, &mut a)?,
        test: Some(sample_labeled(&spec, cfg.gmm.test_size, &mut b)?),
        spec: Some(spec),
    })
}

fn out(cfg: &Config, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_curve(path: &Path, curve: &TradeoffCurve) -> anyhow::Result<()> {
    curve.write_csv(path).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn gen_data(cfg: &Config) -> anyhow::Result<()> {
    let data = load_data(&Config {
        data: Default::default(),
        ..cfg.clone()
    })?;
    for (name, set) in [("train.csv", &data.train), ("test.csv", data.test.as_ref().expect("sampled"))] {
        let path = out(cfg, name);
        save_dataset(set, &path).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {} ({} rows)", path.display(), set.len());
    }
    let spec = data.spec.expect("sampled");
    write_json(&out(cfg, "gmm.json"), &serde_json::to_value(&spec)?)
}

pub fn solve_theory(cfg: &Config) -> anyhow::Result<()> {
    let spec = cfg.gmm.spec()?;
    let curve = frontier(&spec, &cfg.theory.budgets)?;
    write_curve(&out(cfg, "frontier.csv"), &curve)
}

fn build_encoder(cfg: &Config, data: &LabeledDataset, budget: f64) -> anyhow::Result<EncoderModel> {
    Ok(match cfg.model.encoder {
        EncoderKind::Affine => EncoderModel::affine_for_budget(data.dim(), budget),
        EncoderKind::Feedforward => EncoderModel::feedforward(
            data.dim(),
            data.s_classes,
            cfg.model.noise_dim,
            &cfg.model.encoder_hidden,
            cfg.train.encoder_input,
            &mut point_rng(cfg.seed, 0).derive(ENCODER_STREAM),
        )?,
    })
}

pub fn train(cfg: &Config) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let point = point_rng(cfg.seed, 0);
    let budget = cfg.train.budget;
    match cfg.train.mode {
        TrainMode::FairClassifierEo | TrainMode::FairClassifierDp => return train_fair(cfg, &data),
        TrainMode::Representation | TrainMode::TaskAware => {}
    }
    let encoder = build_encoder(cfg, &data.train, budget)?;
    let outcome = if cfg.train.mode == TrainMode::TaskAware {
        let y_classes = data.train.require_y().map(|_| data.train.y_classes)?;
        let adversary = MlpModel::new(
            &MlpSpec::classifier(encoder.dim(), &cfg.model.adversary_hidden, data.train.s_classes),
            &mut point.derive(ADVERSARY_STREAM),
        )?;
        let target = MlpModel::new(
            &MlpSpec::classifier(encoder.dim(), &cfg.model.target_hidden, y_classes),
            &mut point.derive(TARGET_STREAM),
        )?;
        let tc = TrainConfig {
            seed: point.derive(TRAIN_STREAM).next_u64(),
            ..cfg.train.clone()
        };
        train_task_aware(&data.train, encoder, adversary, target, &tc)?
    } else {
        train_representation(&data.train, encoder, &cfg.model.adversary_hidden, &cfg.train, budget, &point)?
    };
    let encoder_path = out(cfg, "encoder.json");
    outcome.encoder.save(&encoder_path)?;
    outcome.adversary.save(&out(cfg, "adversary.mlp"))?;
    if let Some(t) = &outcome.target {
        t.save(&out(cfg, "target.mlp"))?;
    }
    outcome.history.write_csv(&out(cfg, "history.csv"))?;
    println!("wrote {} and history.csv", encoder_path.display());

    let mut summary = json!({
        "mode": cfg.train.mode,
        "budget": budget,
        "iterations": cfg.train.iterations,
        "constraint": cfg.train.constraint,
        "final_distortion": outcome.final_distortion,
        "feasible": outcome.feasible,
    });
    if let Some(test) = &data.test {
        let encoded = encode_dataset(&outcome.encoder, test, &mut eval_rng(&point))?;
        summary["test_adversary_accuracy"] = json!(adversary_accuracy(&outcome.adversary, &encoded.x, &encoded.s)?);
    }
    if let (Some(spec), Some(mech)) = (&data.spec, outcome.encoder.affine_mechanism()) {
        summary["map_oracle_accuracy"] = json!(map_accuracy_closed_form(spec, &mech)?);
        summary["theory_accuracy"] = json!(map_accuracy_closed_form(spec, &solve_water_filling(spec, budget)?.mech)?);
    }
    if !outcome.feasible {
        eprintln!(
            "warning: final distortion {:.4} exceeds the budget {budget} by more than 5%",
            outcome.final_distortion
        );
    }
    write_json(&out(cfg, "summary.json"), &summary)
}

fn criterion(mode: TrainMode) -> FairnessCriterion {
    match mode {
        TrainMode::FairClassifierDp => FairnessCriterion::DemographicParity,
        _ => FairnessCriterion::EqualizedOdds,
    }
}

fn train_fair(cfg: &Config, data: &Data) -> anyhow::Result<()> {
    let set = &data.train;
    set.require_y()?;
    let point = point_rng(cfg.seed, 0);
    let crit = criterion(cfg.train.mode);
    let in_dim = predictor_input(&set.x.select_rows(&[0]), &set.s[..1], set.s_classes, cfg.train.encoder_input)?.cols();
    let predictor = MlpModel::new(
        &MlpSpec::classifier(in_dim, &cfg.model.target_hidden, set.y_classes),
        &mut point.derive(TARGET_STREAM),
    )?;
    let adv_in = match crit {
        FairnessCriterion::EqualizedOdds => 2 * set.y_classes,
        FairnessCriterion::DemographicParity => set.y_classes,
    };
    let adversary = MlpModel::new(
        &MlpSpec::classifier(adv_in, &cfg.model.adversary_hidden, set.s_classes),
        &mut point.derive(ADVERSARY_STREAM),
    )?;
    let tc = TrainConfig {
        seed: point.derive(TRAIN_STREAM).next_u64(),
        ..cfg.train.clone()
    };
    let outcome = train_fair_classifier(set, predictor, adversary, &tc, crit)?;
    outcome.predictor.save(&out(cfg, "predictor.mlp"))?;
    outcome.adversary.save(&out(cfg, "adversary.mlp"))?;
    outcome.history.write_csv(&out(cfg, "history.csv"))?;
    println!("wrote predictor.mlp, adversary.mlp and history.csv");
    let mut summary = json!({
        "mode": cfg.train.mode,
        "budget": cfg.train.budget,
        "iterations": cfg.train.iterations,
        "final_loss": outcome.final_loss,
        "feasible": outcome.feasible,
    });
    if let Some(test) = &data.test {
        summary["test"] = predictor_metrics(&outcome.predictor, test, cfg)?;
    }
    write_json(&out(cfg, "summary.json"), &summary)
}

fn predictor_metrics(predictor: &MlpModel, test: &LabeledDataset, cfg: &Config) -> anyhow::Result<serde_json::Value> {
    let y = test.require_y()?;
    let inp = predictor_input(&test.x, &test.s, test.s_classes, cfg.train.encoder_input)?;
    let pred = predictor.predict_labels(&inp)?;
    let correct = pred.iter().zip(y).filter(|(a, b)| a == b).count();
    let report = fairness_report(&pred, &test.s, Some(y), test.y_classes, test.s_classes)?;
    for w in report.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(json!({
        "accuracy": correct as f64 / test.len() as f64,
        "fairness": report,
    }))
}

pub fn evaluate(
    cfg: &Config,
    encoder: Option<&Path>,
    adversary: Option<&Path>,
    predictor: Option<&Path>,
) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let Some(test) = data.test.as_ref() else {
        bail!("evaluate needs a test set (data.test or --test-data)");
    };
    let report = if let Some(p) = predictor {
        let model = MlpModel::load(p).with_context(|| format!("loading {}", p.display()))?;
        predictor_metrics(&model, test, cfg)?
    } else {
        let Some(path) = encoder else {
            bail!("evaluate needs --encoder or --predictor");
        };
        let enc = EncoderModel::load(path).with_context(|| format!("loading {}", path.display()))?;
        let point = point_rng(cfg.seed, 0);
        let encoded = encode_dataset(&enc, test, &mut eval_rng(&point))?;
        let (dist, _) = distortion(&encoded.x, &test.x, cfg.train.distortion)?;
        let mut r = json!({
            "test_distortion": dist,
            "sensitive_majority_rate": majority_rate(&test.s, test.s_classes)?,
        });
        if let Some(a) = adversary {
            let adv = MlpModel::load(a).with_context(|| format!("loading {}", a.display()))?;
            r["adversary_accuracy"] = json!(adversary_accuracy(&adv, &encoded.x, &encoded.s)?);
        }
        if let (Some(spec), Some(mech)) = (&data.spec, enc.affine_mechanism()) {
            r["map_oracle_accuracy"] = json!(map_accuracy_closed_form(spec, &mech)?);
        }
        if test.y.is_some() && data.train.y.is_some() {
            let outcome = cfur::trainer::TrainOutcome {
                encoder: enc,
                adversary: MlpModel::new(&MlpSpec::classifier(test.dim(), &[], test.s_classes), &mut point.derive(0))?,
                target: None,
                history: Default::default(),
                final_distortion: dist,
                feasible: true,
            };
            let row = evaluate_downstream(
                cfg.train.budget,
                &outcome,
                &data.train,
                test,
                &cfg.model.downstream_hidden,
                cfg.model.downstream_epochs,
                cfg.train.batch_size,
                &point,
            )?;
            r["downstream_accuracy"] = json!(row.downstream_accuracy);
            r["max_demp"] = json!(row.max_demp);
            r["eo_gaps"] = json!(row.eo_gaps);
        }
        r
    };
    write_json(&out(cfg, "metrics.json"), &report)
}

pub fn sweep(cfg: &Config) -> anyhow::Result<()> {
    let curve = match cfg.sweep.kind {
        SweepKind::Gmm => gmm_sweep_with(&cfg.gmm.spec()?, &cfg.gmm_sweep())?.curve,
        SweepKind::Fair => fair_sweep(&cfg.fair_sweep())?,
        SweepKind::Dataset => {
            if cfg.data.train.is_none() && cfg.data.tabular.is_none() {
                bail!("dataset sweep needs data.train or data.tabular");
            }
            let data = load_data(cfg)?;
            let Some(test) = data.test.as_ref() else {
                bail!("dataset sweep needs a test set (data.test or --test-data)");
            };
            fair_sweep_on(&data.train, test, &cfg.fair_sweep())?
        }
    };
    write_curve(&out(cfg, "curve.csv"), &curve)
}

pub fn dp_risk(cfg: &Config) -> anyhow::Result<()> {
    let table = epsilon_table(cfg.dp.dim, cfg.dp.delta, &cfg.dp.budgets)?;
    let path = out(cfg, "dp_risk.csv");
    table.write_csv(&path)?;
    print!("{}", table.to_csv_string()?);
    println!("wrote {}", path.display());
    let names = noise_registry().names().join(", ");
    println!("noise baselines: {names}");
    Ok(())
}

pub fn mi_estimate(cfg: &Config, encoder: Option<&Path>, model: Option<&Path>) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let set = data.test.as_ref().unwrap_or(&data.train);
    let mut x = set.x.clone();
    if let Some(p) = encoder {
        let enc = EncoderModel::load(p).with_context(|| format!("loading {}", p.display()))?;
        x = enc.encode(&set.x, &set.s, &mut eval_rng(&point_rng(cfg.seed, 0)))?;
    }
    let (k, pca) = (cfg.mi.k, cfg.mi.pca);
    let est = if let Some(p) = model {
        let m = MlpModel::load(p).with_context(|| format!("loading {}", p.display()))?;
        embedding_mi(&m, &x, &set.s, k, pca)?
    } else {
        let mut cloud = SampleCloud::new(x)?;
        if let Some(c) = pca {
            cloud = pca_project(&cloud, c)?.projected;
        }
        mi_with_discrete_label(&cloud, &set.s, k)?
    };
    if est.jittered > 0 {
        eprintln!("warning: {} duplicate points were jittered", est.jittered);
    }
    write_json(
        &out(cfg, "mi.json"),
        &json!({
            "n": set.len(),
            "k": k,
            "pca": pca,
            "mi_nats": est.nats,
            "mi_raw": est.raw,
            "jittered": est.jittered,
        }),
    )
}
