use fouriernet::mask::{connected_components, trace_contour, BinaryMask, Connectivity};
use fouriernet::{descriptor_set, fourier_coefficients, fourier_coefficients_quadrature};

fn main() {
    let mask = BinaryMask::from_fn(11, 11, |r, c| (1..=9).contains(&r) && (1..=9).contains(&c));
    let set = connected_components(&mask, Connectivity::Eight);
    let contour = trace_contour(&set.components[0]).unwrap();
    println!("T={} L={}", contour.len(), contour.total_length);
    for n in 1..=4 {
        let (a, b) = fourier_coefficients(&contour, n).unwrap();
        let (qa, qb) = fourier_coefficients_quadrature(&contour, n, 1_000_000).unwrap();
        println!("n={n}: closed a={a:.17e} b={b:.17e}");
        println!("      oracle a={qa:.17e} b={qb:.17e}");
    }
    let ds = descriptor_set(&contour, 4).unwrap();
    for n in 0..4 {
        println!("A_{} = {:.17e}  alpha = {:.17e}", n + 1, ds.amplitudes[n], ds.phases[n]);
    }
    // Also 3x3 square for the library golden test
    let m3 = BinaryMask::from_fn(8, 8, |r, c| r < 3 && c < 3);
    let s3 = connected_components(&m3, Connectivity::Eight);
    let c3 = trace_contour(&s3.components[0]).unwrap();
    let (qa, qb) = fourier_coefficients_quadrature(&c3, 1, 1_000_000).unwrap();
    println!("3x3 n=1 oracle: a={qa:.17e} b={qb:.17e}");
    let (qa4, qb4) = fourier_coefficients_quadrature(&c3, 4, 1_000_000).unwrap();
    println!("3x3 n=4 oracle: a={qa4:.17e} b={qb4:.17e}");
}
