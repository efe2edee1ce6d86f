//! A walkthrough of the hierarchical fusion stages on toy data: temporal
//! attention over an instance history, spatial attention within a frame,
//! deformable visual aggregation, gated text injection, and depth
//! refinement.
//!
//! ```bash
//! cargo run --example fusion_stages
//! ```

use std::rc::Rc;

use scenefuse::fusion::{
    bind_attention, bind_deformable, bind_text_fusion, deformable_aggregate, fuse_vision,
    refine_depth, spatial_self_attention, temporal_cross_attention, text_conditional_aggregate,
    AttentionParams, DeformableParams, TextFusionParams,
};
use scenefuse::geometry::Camera;
use scenefuse::instance_init::RigFrame;
use scenefuse::numeric::{Activation, Init, Mlp, Tape, Tensor};
use scenefuse::simulator::embed_text;

fn main() -> scenefuse::Result<()> {
    let mut rng = scenefuse::rng(3);
    let d = 4;

    let mut tape = Tape::new();
    let attention = AttentionParams::new(d, &mut rng);
    let bound = bind_attention(&mut tape, &attention);

    // temporal: one instance attends over its own 3-step history
    let stack = Tensor::uniform(&mut rng, vec![3, d], -1.0, 1.0);
    let stack_id = tape.leaf(&stack);
    let (attended, weights) = temporal_cross_attention(&mut tape, stack_id, &bound, None)?;
    println!("temporal weights (current, t-1, t-2): {:?}", tape.value(weights));

    // spatial: three instances attend to each other
    let frame = Tensor::uniform(&mut rng, vec![3, d], -1.0, 1.0);
    let frame_id = tape.leaf(&frame);
    let (context, spatial_w) = spatial_self_attention(&mut tape, frame_id, &bound)?;
    println!("spatial weight rows sum to 1: {:?}", &tape.value(spatial_w)[..3]);

    // deformable: sample a rendered map around projected positions
    let map = Tensor::uniform(&mut rng, vec![2, 16, 16], 0.0, 1.0);
    let rig = RigFrame {
        cameras: vec![Camera::looking([0.0, 0.0, 0.0], 0.0, 8.0, 8.0, 8.0, 8.0, 16, 16)],
        features: vec![Rc::new(map)],
        depths: vec![Rc::new(Tensor::new(vec![1, 16, 16], vec![6.0; 256])?)],
    };
    let deform = DeformableParams::new(d, 2, 1, 4, &mut rng)?;
    let dbound = bind_deformable(&mut tape, &deform);
    let positions = Tensor::new(vec![3, 3], vec![6.0, 0.5, 0.2, 7.0, -1.0, 0.0, 5.0, 2.0, 0.4])?;
    let pos_id = tape.leaf(&positions);
    let (vision, dweights) = deformable_aggregate(&mut tape, context, pos_id, &rig, &deform, &dbound)?;
    println!("deformable weights (instance 0): {:?}", &tape.value(dweights)[..4]);

    // text gate
    let fused = fuse_vision(&mut tape, context, vision)?;
    let text_params = TextFusionParams::new(2 * d, 16, &mut rng);
    let tbound = bind_text_fusion(&mut tape, &text_params);
    let text = embed_text("pedestrian crossing ahead, yield expected", 16)?;
    let text_row = Tensor::new(vec![1, 16], text.data().to_vec())?;
    let text_id = tape.constant(&text_row);
    let (with_text, gates) = text_conditional_aggregate(&mut tape, fused, text_id, &tbound)?;
    println!("text gates per instance: {:?}", tape.value(gates));

    // depth refinement
    let head = Mlp::new(&[2 * d, 4, 1], Activation::Relu, Init::Uniform(0.5), &mut rng)?;
    let hbound = head.bind(&mut tape);
    let d_init = Tensor::new(vec![3, 1], vec![6.0, 7.1, 5.4])?;
    let d_id = tape.leaf(&d_init);
    let refined = refine_depth(&mut tape, with_text, d_id, &head, &hbound, 1.0)?;
    println!("initial depths : {:?}", d_init.data());
    println!("refined depths : {:?}", tape.value(refined));

    let _ = attended;
    Ok(())
}
