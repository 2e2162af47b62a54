use fouriernet::autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let numel = shape.iter().product();
    Tensor::from_vec(shape, (0..numel).map(|_| (rng.random::<f64>() - 0.5) * 2.0 * scale).collect())
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = rand_tensor(&mut rng, &[1, 2, 4, 4], 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], 0.6);
    let b = rand_tensor(&mut rng, &[3], 0.4);
    let t = rand_tensor(&mut rng, &[1, 3, 4, 4], 1.0);

    let eval = |xv: &Tensor<f64>| -> f64 {
        let mut g: Graph<f64> = Graph::new();
        let xr = g.leaf(xv.clone(), false);
        let wr = g.leaf(w.clone(), false);
        let br = g.leaf(b.clone(), false);
        let tr = g.leaf(t.clone(), false);
        let y = g.conv2d(xr, wr, br).unwrap();
        let l = g.mse_loss(y, tr).unwrap();
        g.value(l).data()[0]
    };

    let mut g: Graph<f64> = Graph::new();
    let xr = g.leaf(x.clone(), true);
    let wr = g.leaf(w.clone(), false);
    let br = g.leaf(b.clone(), false);
    let tr = g.leaf(t.clone(), false);
    let y = g.conv2d(xr, wr, br).unwrap();
    let l = g.mse_loss(y, tr).unwrap();
    g.backward(l).unwrap();
    let an = g.grad(xr).unwrap()[0];

    for h in [1e-2, 1e-3, 1e-4, 1e-5] {
        let mut plus = x.clone();
        plus.data_mut()[0] += h;
        let mut minus = x.clone();
        minus.data_mut()[0] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        println!("h={h:.0e}: fd={fd:.15} an={an:.15} err={:.3e}", (fd - an).abs());
    }

    // Independent direct gradient: dL/dx[0] = sum over out positions
    // influenced by x[0,0,0,0] of 2*(y - t)/numel * w_tap.
    let yv = g.value(y).data().to_vec();
    let numel = yv.len() as f64;
    let (h_sp, w_sp) = (4usize, 4usize);
    let mut direct = 0.0f64;
    for oc in 0..3usize {
        for ky in 0..3usize {
            for kx in 0..3usize {
                // x[0,0] contributes to y[yo,xo] where yo+ky-1 == 0 => yo = 1-ky
                let yo = 1isize - ky as isize;
                let xo = 1isize - kx as isize;
                if yo < 0 || xo < 0 {
                    continue;
                }
                let (yo, xo) = (yo as usize, xo as usize);
                let yidx = (oc * h_sp + yo) * w_sp + xo;
                let dy = 2.0 * (yv[yidx] - t.data()[yidx]) / numel;
                direct += dy * w.data()[(oc * 2 + 0) * 9 + ky * 3 + kx];
            }
        }
    }
    println!("direct={direct:.15} an={an:.15} diff={:.3e}", (direct - an).abs());
}
