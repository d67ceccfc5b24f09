//! Drives one learner batch by batch and shows what each step touches.

use deepccg::stream::{build_disjoint_tasks, synth_gaussian_dataset, SynthSpec};
use deepccg::trainer::{Hyper, LearnerState, Method, Scenario};

fn main() -> deepccg::Result<()> {
    let data = synth_gaussian_dataset(&SynthSpec::default(), 0)?;
    let seq = build_disjoint_tasks(&data, 5, 0.2, 1)?;
    let hyper = Hyper {
        eta: 0.0125,
        ..Hyper::default()
    };
    let mut learner = LearnerState::new(Method::DeepCcg, &[8, 64, 64, 16], 10, hyper, 2)?;

    for (i, batch) in seq.batches(3).enumerate() {
        let stats = learner.step(&batch)?;
        if i % 10 == 0 {
            println!(
                "batch {i:>2} (task {}): loss {:>8.4}, replay {:>2}, conditioning {:>3}, memory {:?}",
                batch.task_id,
                stats.loss,
                stats.replay,
                stats.conditioning,
                learner.memory.class_counts()
            );
        }
    }
    let report = learner.evaluate(&seq.tasks, Scenario::TaskInc)?;
    println!("\nper-task accuracy {:?}", report.per_task);
    println!("average {:.3}", report.average);
    let class_inc = learner.evaluate(&seq.tasks, Scenario::ClassInc)?;
    println!("same model, class-incremental: {:.3}", class_inc.average);
    Ok(())
}
