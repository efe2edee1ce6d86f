//! Sparse query initialization: projecting queries into rendered views,
//! bilinear sampling, masked aggregation, and proposal decoding.
//!
//! ```bash
//! cargo run --example multiview_sampling
//! ```

use scenefuse::instance_init::{
    aggregate_views_on, fuse_query_on, propose_on, pph_output_width, sample_multiview_on,
    threshold, QuerySet,
};
use scenefuse::model::rig_frame;
use scenefuse::numeric::{Activation, Init, Mlp, Tape};
use scenefuse::simulator::{generate_scenario, AgentClass, GenSpec};

fn main() -> scenefuse::Result<()> {
    let scenario = generate_scenario(9, &GenSpec::default())?;
    let rig = rig_frame(&scenario, 3)?;

    let mut rng = scenefuse::rng(1);
    let queries = QuerySet::grid(4, 4, 2, 50.0, 3.0, 8, &mut rng)?;
    let pph = Mlp::new(
        &[8 + 8, 32, pph_output_width(AgentClass::COUNT)],
        Activation::Relu,
        Init::Uniform(0.5),
        &mut rng,
    )?;

    let mut tape = Tape::new();
    let pos = tape.leaf(&queries.positions);
    let embed = tape.leaf(&queries.embeddings);
    let samples = sample_multiview_on(&mut tape, pos, &rig)?;
    let visible_per_view: Vec<usize> =
        samples.mask.iter().map(|m| m.iter().filter(|&&v| v).count()).collect();
    println!("queries visible per view: {visible_per_view:?}");

    let aggregated = aggregate_views_on(&mut tape, &samples)?;
    let fused = fuse_query_on(&mut tape, aggregated, embed)?;
    let pph_bound = pph.bind(&mut tape);
    let proposals = propose_on(&mut tape, &pph, &pph_bound, fused, pos, AgentClass::COUNT)?;
    let boxes = proposals.boxes(&tape);

    let mut scored: Vec<(usize, f64)> =
        boxes.iter().enumerate().map(|(i, b)| (i, b.score)).collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    println!("top proposals (untrained head, scores hover near 0.5):");
    for &(i, s) in scored.iter().take(4) {
        let b = &boxes[i];
        println!(
            "  query {i:2}: score {s:.3} class {} center ({:+.1}, {:+.1}, {:+.1})",
            b.class, b.center[0], b.center[1], b.center[2]
        );
    }

    let features = vec![scenefuse::numeric::Tensor::zeros(vec![16]); boxes.len()];
    let instances = threshold(&boxes, &features, 0.5)?;
    println!("{} of {} proposals survive a 0.5 threshold", instances.len(), boxes.len());
    Ok(())
}
