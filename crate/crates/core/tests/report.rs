use sparsefilter_core::models::{compact, FilterCounts};
use sparsefilter_core::pruner::apply_mask;
use sparsefilter_core::report::{
    export_pruned, parse_pgm, read_report_csv, render_filters_pgm, render_table, write_report_csv,
    RunReport,
};
use sparsefilter_core::train::{load_checkpoint, save_checkpoint, Checkpoint};
use sparsefilter_core::ops::GradientStore;
use sparsefilter_core::{build_lenet, KernelMask, TrainConfig, EpochMetrics};

fn row(method: &str, lambda: f64, err: f64, active: &[usize]) -> RunReport {
    RunReport {
        method: method.into(),
        lambda,
        error_pct: err,
        counts: FilterCounts {
            active: active.to_vec(),
            original: vec![20, 50],
        },
    }
}

#[test]
fn table_rows_derive_sparsity() {
    let rows = [row("baseline", 0.0, 0.8, &[20, 50]), row("l1/l2", 0.5, 0.7, &[5, 18])];
    let text = render_table(&rows);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("Conv-filter sparsity"));
    assert!(lines[1].contains("20") && lines[1].contains("50") && lines[1].ends_with("0.0%"));
    assert!(lines[2].contains("5 (75.0%)") && lines[2].contains("18 (64.0%)"));
    assert!(lines[2].ends_with("67.1%"));
}

#[test]
fn csv_round_trip() {
    let rows = vec![
        row("baseline", 0.0, 0.8, &[20, 50]),
        row("l1/l2", 0.5, 0.7, &[5, 18]),
        row("l1", 0.05, 1.25, &[19, 49]),
    ];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("report.csv");
    write_report_csv(&p, &rows).unwrap();
    assert_eq!(read_report_csv(&p).unwrap(), rows);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.lines().nth(2).unwrap().ends_with(",67.1"));
}

fn pruned_checkpoint() -> Checkpoint {
    let mut net = build_lenet([1, 28, 28], 3).unwrap();
    let mut mask = KernelMask::all_active(&net);
    let removals: Vec<(usize, usize)> =
        (5..20).map(|k| (0, k)).chain((18..50).map(|k| (1, k))).collect();
    apply_mask(&mut net, &removals, &mut mask, None).unwrap();
    let velocity = GradientStore::zeros_like(&net.params()).velocity;
    Checkpoint {
        network: net,
        mask,
        velocity,
        config: TrainConfig::default(),
        history: vec![EpochMetrics {
            epoch: 1,
            loss_task: 0.1,
            loss_reg: 2.0,
            loss_all: 0.1,
            test_error_pct: 0.7,
            active_counts: vec![5, 18],
            total_sparsity_pct: 4700.0 / 70.0,
        }],
    }
}

#[test]
fn report_from_checkpoint() {
    let r = RunReport::from_checkpoint(&pruned_checkpoint()).unwrap();
    assert_eq!(r.method, "baseline");
    assert_eq!(r.counts.active, vec![5, 18]);
    assert_eq!(format!("{:.1}", r.total_sparsity_pct()), "67.1");
}

#[test]
fn export_shrinks_and_reloads() {
    let ckpt = pruned_checkpoint();
    let small = export_pruned(&ckpt).unwrap();
    let shapes: Vec<Vec<usize>> = small.network.params().iter().map(|p| p.shape().to_vec()).collect();
    assert_eq!(shapes[2], vec![18, 5, 5, 5]);
    assert_eq!(shapes[4], vec![288, 500]);
    assert_eq!(small.mask.active_counts(), vec![5, 18]);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &small).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.network.params(), compact(&ckpt.network, &ckpt.mask).unwrap().params());
}

#[test]
fn filter_dump_layout() {
    let ckpt = pruned_checkpoint();
    let conv2 = &ckpt.network.conv_layer(1).unwrap().weights;
    let bytes = render_filters_pgm(conv2).unwrap();
    let (h, px) = parse_pgm(&bytes).unwrap();
    // 50 kernels -> 8 columns x 7 rows of 5x5 tiles with 1px separators
    assert_eq!((h.width, h.height), (8 * 6 + 1, 7 * 6 + 1));
    let tile = |i: usize| -> Vec<u8> {
        let (ty, tx) = (i / 8, i % 8);
        (0..5)
            .flat_map(|y| (0..5).map(move |x| (y, x)))
            .map(|(y, x)| px[(ty * 6 + 1 + y) * h.width + tx * 6 + 1 + x])
            .collect()
    };
    assert!(tile(30).iter().all(|&p| p == 0));
    let live = tile(0);
    assert_eq!(live.iter().min(), Some(&0));
    assert_eq!(live.iter().max(), Some(&255));
}
