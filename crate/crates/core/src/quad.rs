//! Fixed-order Gauss-Legendre quadrature.

/// 16-point Gauss-Legendre nodes and weights on `[-1, 1]` (positive half).
const GL16: [(f64, f64); 8] = [
    (0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
    (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
    (0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
    (0.755_404_408_355_003_0, 0.124_628_971_255_533_9),
    (0.865_631_202_387_831_7, 0.095_158_511_682_492_78),
    (0.944_575_023_073_232_6, 0.062_253_523_938_647_89),
    (0.989_400_934_991_649_9, 0.027_152_459_411_754_09),
];

pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    GL16.iter()
        .map(|&(x, w)| w * (f(c - h * x) + f(c + h * x)))
        .sum::<f64>()
        * h
}

pub fn gauss_legendre_composite(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + p as f64 * w;
            gauss_legendre(&f, lo, lo + w)
        })
        .sum()
}
