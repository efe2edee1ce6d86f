//! The full artifact pipeline through the command layer: generate
//! scenarios, train, evaluate (metrics CSV + BEV plots), and run the
//! information diagnostics — everything the `scenefuse` binary does,
//! driven as library calls.
//!
//! ```bash
//! cargo run --example end_to_end
//! ```

use scenefuse::cli::{cmd_diagnose_mi, cmd_eval, cmd_generate, cmd_train};
use scenefuse::config::RunConfig;

fn main() -> scenefuse::Result<()> {
    let root = std::env::temp_dir().join("scenefuse_end_to_end");
    let _ = std::fs::remove_dir_all(&root);
    let cfg = RunConfig {
        seed: 7,
        scenario_dir: root.join("scenarios"),
        params_path: root.join("model.omsk"),
        out_dir: root.join("out"),
        scenario_count: 8,
        train_steps: 60,
        ..RunConfig::default()
    };

    println!("== generate ==");
    let files = cmd_generate(&cfg)?;
    println!("wrote {} scenario files", files.len());

    println!("\n== train ==");
    let report = cmd_train(&cfg)?;
    println!(
        "loss {:.2} -> {:.2}; parameters at {}",
        report.initial_loss,
        report.final_loss,
        report.params_path.display()
    );

    println!("\n== eval ==");
    let eval = cmd_eval(&cfg)?;
    for line in eval.csv.lines().take(4) {
        println!("{line}");
    }
    println!("... ({} rows, plots in {})", eval.rows.len(), cfg.out_dir.display());

    println!("\n== diagnose-mi ==");
    let mi = cmd_diagnose_mi(&cfg)?;
    println!(
        "I(B;I,T): text-fused {:.4} nats, vision-only {:.4} nats",
        mi.joint_fused, mi.joint_vision_only
    );
    Ok(())
}
