use insitu_core::cnn::data::synthetic_blobs;
use insitu_core::cnn::{Dataset, LayerSpec, Network, NetworkSpec, Reduction, Sgd, SyntheticSpec};
use insitu_core::view::{build_image_grid, build_weight_grid};
use insitu_core::{
    apply_prune, batch_sum, grid_layout, plan_prune, Merge, PrunePlan, read_vtp, write_csv, write_vtp, LayerState, Networkf, Scalar,
    SimilarityReport, Snapshotf, Tensor4, VtpMode,
};

fn spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: [12, 12, 1],
        layers: vec![
            LayerSpec::Conv { filters: 6, window: 3 },
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv { filters: 5, window: 2 },
            LayerSpec::Dense { units: 12 },
            LayerSpec::SoftmaxOutput { classes: 3 },
        ],
    }
}

fn blobs<T: Scalar>() -> (Dataset<T>, Dataset<T>) {
    let s = SyntheticSpec {
        classes: 3,
        train_per_class: 40,
        test_per_class: 10,
        shape: [12, 12, 1],
        noise: 0.2,
    };
    synthetic_blobs(&s, 7).unwrap()
}

fn train<T: Scalar>(steps: usize) -> (Network<T>, Vec<f64>) {
    let (train, _) = blobs::<T>();
    let mut net = Network::<T>::init(&spec(), 11).unwrap();
    let sgd = Sgd::new(0.01).with_reduction(Reduction::Sum);
    let mut losses = Vec::new();
    for s in 0..steps {
        let idx: Vec<usize> = (0..20).map(|i| (s * 20 + i) % train.len()).collect();
        let rec = net.train_step(&train.batch(&idx).unwrap(), &sgd).unwrap();
        losses.push(rec.loss);
    }
    (net, losses)
}

#[test]
fn training_is_generic_over_the_scalar() {
    let (n64, l64) = train::<f64>(60);
    let (n32, l32) = train::<f32>(60);
    assert_eq!(n64.step(), 60);
    assert_eq!(n32.filter_counts(), n64.filter_counts());
    let head: f64 = l64[..10].iter().sum();
    let tail: f64 = l64[50..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
    for (a, b) in l64.iter().zip(&l32).take(5) {
        assert!((a - b).abs() < 1e-3 * a.abs().max(1.0), "{a} vs {b}");
    }
}

fn logits_gap(a: &Networkf, b: &Networkf, images: &Tensor4<f64>) -> f64 {
    let x = a.logits(images).unwrap();
    let y = b.logits(images).unwrap();
    x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

#[test]
fn merging_a_copied_filter_preserves_outputs_in_both_conv_layers() {
    let (_, test) = blobs::<f64>();
    for (layer, from, to) in [(0, 1, 4), (2, 0, 3)] {
        let mut net = Networkf::init(&spec(), 3).unwrap();
        net.conv_mut(layer).unwrap().copy_filter(from, to).unwrap();

        let acts = net.conv_activations(test.images()).unwrap();
        let (_, maps) = acts.iter().find(|(l, _)| *l == layer).unwrap();
        let report = SimilarityReport::compute(0, layer, &batch_sum(maps).unwrap(), 0.97).unwrap();
        let group = report.groups.iter().find(|g| g.members.contains(&to)).expect("copy grouped");
        assert!(group.members.contains(&from));

        let plan = plan_prune(&report).unwrap();
        let merged = apply_prune(&net, &plan).unwrap();
        assert_eq!(merged.conv(layer).unwrap().filters(), net.conv(layer).unwrap().filters() - plan.removed_count());

        let exact = PrunePlan {
            layer_id: layer,
            merges: vec![Merge { keep: from, remove: vec![to] }],
            created_at_step: 0,
        };
        let pruned = apply_prune(&net, &exact).unwrap();
        assert!(pruned.parameter_count() < net.parameter_count());
        let gap = logits_gap(&net, &pruned, test.images());
        assert!(gap < 1e-9, "layer {layer}: {gap}");
    }
}

#[test]
fn trained_views_survive_the_file_formats() {
    let (net, _) = train::<f64>(20);
    let (_, test) = blobs::<f64>();
    let dir = tempfile::tempdir().unwrap();

    let kernel = net.conv(0).unwrap().kernel();
    let layout = grid_layout(6).unwrap();
    let weights = build_weight_grid(kernel, &layout).unwrap();
    let acts = net.conv_activations(test.images()).unwrap();
    let images = build_image_grid(&batch_sum(&acts[0].1).unwrap(), &layout).unwrap();

    for (name, pd) in [("w", &weights), ("i", &images)] {
        for mode in [VtpMode::Binary, VtpMode::Ascii] {
            let path = dir.path().join(format!("{name}_{mode:?}.vtp"));
            write_vtp(pd, &path, mode).unwrap();
            assert_eq!(&read_vtp(&path).unwrap(), pd);
        }
        let csv = dir.path().join(format!("{name}.csv"));
        write_csv(pd, &csv).unwrap();
        let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
        assert_eq!(rows, pd.num_points() + 1);
    }
    assert_eq!(images.num_points(), 6 * 10 * 10);
}

#[test]
fn snapshots_restore_the_exact_network() {
    let (net, _) = train::<f64>(15);
    let (_, test) = blobs::<f64>();
    let acts = net.conv_activations(test.images()).unwrap();
    let mut state = LayerState::empty(0);
    state.summed = Some(batch_sum(&acts[0].1).unwrap());
    let snap = Snapshotf {
        network: net.clone(),
        layers: vec![state],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.snap");
    snap.save(&path).unwrap();
    let back = Snapshotf::load(&path).unwrap();
    assert_eq!(back.network.step(), 15);
    assert_eq!(logits_gap(&net, &back.network, test.images()), 0.0);
    assert_eq!(back.layers[0].summed, snap.layers[0].summed);
    assert_eq!(back.to_bytes().unwrap(), snap.to_bytes().unwrap());
}
