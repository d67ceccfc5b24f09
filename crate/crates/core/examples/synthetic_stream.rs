//! Builds the synthetic Gaussian dataset, cuts it into disjoint tasks and
//! shifting windows, and walks the batch stream.

use deepccg::linalg::{mean_of, sq_dist};
use deepccg::stream::{build_disjoint_tasks, build_shifting_window, synth_gaussian_dataset, SynthSpec};

fn main() -> deepccg::Result<()> {
    let spec = SynthSpec::default();
    let data = synth_gaussian_dataset(&spec, 0)?;
    println!(
        "{} examples, {} classes in {} dimensions",
        data.len(),
        spec.num_classes,
        spec.d_in
    );

    // Nearest class mean in input space, as a separability sanity check.
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|c| {
            let xs: Vec<&[f64]> = data.iter().filter(|e| e.y == c).map(|e| e.x.as_slice()).collect();
            mean_of(&xs)
        })
        .collect();
    let correct = data
        .iter()
        .filter(|e| {
            let best = (0..means.len())
                .min_by(|&a, &b| sq_dist(&e.x, &means[a]).total_cmp(&sq_dist(&e.x, &means[b])))
                .unwrap();
            best == e.y
        })
        .count();
    println!("nearest-mean accuracy: {:.3}", correct as f64 / data.len() as f64);

    let disjoint = build_disjoint_tasks(&data, 5, 0.2, 7)?;
    println!("\ndisjoint tasks (class order {:?}):", disjoint.class_order);
    for t in &disjoint.tasks {
        println!("  task {}: classes {:?}, {} train / {} test", t.task_id, t.classes, t.train.len(), t.test.len());
    }

    let window = build_shifting_window(&data, 2, 0.2, 7)?;
    println!("\nshifting window of length 2:");
    for t in &window.tasks {
        println!("  task {}: classes {:?}, {} train / {} test", t.task_id, t.classes, t.train.len(), t.test.len());
    }

    let mut last_task = usize::MAX;
    let mut batches = 0;
    for b in disjoint.batches(3) {
        if b.task_id != last_task {
            let labels: Vec<usize> = b.examples.iter().map(|e| e.y).collect();
            println!("first batch of task {}: labels {labels:?}", b.task_id);
            last_task = b.task_id;
        }
        batches += 1;
    }
    println!("{batches} batches of up to {} examples in one pass", disjoint.batch_size);
    Ok(())
}
