// Scratch: find (param seed, scene seed) pairs where the tiny-profile FD
// check sits far from every ReLU/max kink (will be removed).
use corrsel::net::{
    finite_difference_check, mine_graph, Architecture, Mining, Model,
};
use corrsel::synth::{generate, GeneratorConfig, SceneKind};

#[test]
#[ignore]
fn probe_grad_seeds() {
    let model = Model::new(Architecture::tiny()).unwrap();
    for param_seed in [12345u64, 1, 2, 3, 4, 5, 6, 7, 8] {
        for scene_seed in [9876u64, 11, 22, 33] {
            let params = model.init_params(param_seed);
            let scene = generate(&GeneratorConfig {
                n_correspondences: 16,
                inlier_ratio: 0.5,
                keypoint_noise_sigma: 1e-3,
                frame_noise_sigma: 1e-3,
                scene_kind: SceneKind::TwoView3d,
                seed: scene_seed,
                ..GeneratorConfig::default()
            })
            .unwrap();
            let graph =
                mine_graph(&scene.correspondences, Mining::Compatibility, 4, 1e-3, 4000).unwrap();
            let checks = finite_difference_check(
                &model,
                &params,
                &scene.correspondences,
                &graph,
                &scene.labels_gt,
                1e-4,
            )
            .unwrap();
            let worst = checks
                .iter()
                .map(|c| c.max_rel_err)
                .fold(0.0f64, f64::max);
            println!("param_seed {param_seed:>6} scene_seed {scene_seed:>5}: worst {worst:.3e}");
        }
    }
}
