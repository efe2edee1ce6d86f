//! Toy end-to-end training: generate scenarios, fit anchors, descend the
//! multi-task loss, and report the per-task breakdown before and after.
//!
//! ```bash
//! cargo run --example train_toy
//! ```

use scenefuse::losses::LossWeights;
use scenefuse::model::{fit_anchors, training_loss, LossBreakdown, Model, ModelConfig, Trainer};
use scenefuse::simulator::{generate_scenario, GenSpec};

fn mean_loss(
    model: &Model,
    scenarios: &[scenefuse::simulator::Scenario],
    schedule: &[(usize, usize)],
    weights: &LossWeights,
) -> scenefuse::Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for &(si, f) in schedule {
        let (_, _, _, b) = training_loss(model, &scenarios[si], f, weights)?;
        acc.total += b.total;
        acc.detection += b.detection;
        acc.map += b.map;
        acc.depth += b.depth;
        acc.motion += b.motion;
        acc.planning += b.planning;
    }
    let n = schedule.len() as f64;
    acc.total /= n;
    acc.detection /= n;
    acc.map /= n;
    acc.depth /= n;
    acc.motion /= n;
    acc.planning /= n;
    Ok(acc)
}

fn main() -> scenefuse::Result<()> {
    let spec = GenSpec::default();
    let scenarios: Vec<_> =
        (0..25).map(|i| generate_scenario(500 + i, &spec)).collect::<scenefuse::Result<_>>()?;

    let mut model = Model::new(ModelConfig::default(), 7)?;
    fit_anchors(&mut model, &scenarios, 7)?;
    let weights = LossWeights::default();

    let schedule: Vec<(usize, usize)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            (model.cfg.history..s.duration - model.cfg.plan_horizon).map(move |f| (si, f))
        })
        .collect();

    let before = mean_loss(&model, &scenarios, &schedule, &weights)?;
    println!(
        "before: total {:.3} (det {:.3} map {:.3} depth {:.3} motion {:.3} plan {:.3})",
        before.total, before.detection, before.map, before.depth, before.motion, before.planning
    );

    let mut trainer = Trainer::new(model, weights, 2e-2);
    for step in 0..200 {
        let batch: Vec<(&scenefuse::simulator::Scenario, usize)> = (0..4)
            .map(|k| {
                let (si, f) = schedule[(step * 4 + k) % schedule.len()];
                (&scenarios[si], f)
            })
            .collect();
        let b = trainer.step_batch(&batch)?;
        if step % 25 == 0 {
            println!("step {step:3}: sample loss {:.3}", b.total);
        }
    }
    let model = trainer.into_model();

    let after = mean_loss(&model, &scenarios, &schedule, &weights)?;
    println!(
        "after:  total {:.3} (det {:.3} map {:.3} depth {:.3} motion {:.3} plan {:.3})",
        after.total, after.detection, after.map, after.depth, after.motion, after.planning
    );
    println!("loss ratio: {:.3}", after.total / before.total);
    Ok(())
}
