//! Rough throughput probe for the convolution kernels. Run explicitly:
//! `cargo test -p sanet-core --test kernel_bench -- --ignored --nocapture`

use std::time::Instant;

use sanet_core::{Pad, Tape, Tensor};

#[test]
#[ignore]
fn conv_throughput() {
    // Typical mid-stage shape: batch 8, 16->16 channels, 32x32, 3x3 kernel.
    let n = 8;
    let (cin, cout) = (16, 16);
    let (h, w) = (32, 32);
    let x = Tensor::<f32>::full(&[n, cin, h, w], 0.5).requires_grad();
    let wgt = Tensor::<f32>::full(&[cout, cin, 3, 3], 0.1).requires_grad();
    let b = Tensor::<f32>::zeros(&[cout]).requires_grad();

    let macs_fwd = (n * cout * h * w * cin * 9) as f64;

    // Forward only.
    let reps = 200;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::<f32>::no_grad();
        let _ = tape.conv2d(&x, &wgt, Some(&b), 1, Pad::symmetric(1)).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "forward: {:.2} GMAC/s ({:.3} ms/iter)",
        macs_fwd * reps as f64 / dt / 1e9,
        dt / reps as f64 * 1e3
    );

    // Forward + backward.
    let t0 = Instant::now();
    for _ in 0..reps {
        x.clear_grad();
        wgt.clear_grad();
        b.clear_grad();
        let mut tape = Tape::<f32>::new();
        let y = tape.conv2d(&x, &wgt, Some(&b), 1, Pad::symmetric(1)).unwrap();
        let s = tape.sum_all(&y);
        tape.backward(&s).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "fwd+bwd: {:.2} GMAC/s effective ({:.3} ms/iter, 3x MACs assumed)",
        3.0 * macs_fwd * reps as f64 / dt / 1e9,
        dt / reps as f64 * 1e3
    );
}
