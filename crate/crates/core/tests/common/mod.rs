use std::f64::consts::PI;

/// Reference CIEDE2000 written from the published formula in radians.
pub fn oracle_de00(c1: [f64; 3], c2: [f64; 3]) -> f64 {
    let (l1, a1, b1) = (c1[0], c1[1], c1[2]);
    let (l2, a2, b2) = (c2[0], c2[1], c2[2]);
    let cbar = ((a1 * a1 + b1 * b1).sqrt() + (a2 * a2 + b2 * b2).sqrt()) / 2.0;
    let g = 0.5 * (1.0 - (cbar.powi(7) / (cbar.powi(7) + 25f64.powi(7))).sqrt());
    let (ap1, ap2) = ((1.0 + g) * a1, (1.0 + g) * a2);
    let (cp1, cp2) = ((ap1 * ap1 + b1 * b1).sqrt(), (ap2 * ap2 + b2 * b2).sqrt());
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            b.atan2(a).rem_euclid(2.0 * PI)
        }
    };
    let (hp1, hp2) = (hue(b1, ap1), hue(b2, ap2));
    let dl = l2 - l1;
    let dc = cp2 - cp1;
    let dh = if cp1 * cp2 == 0.0 {
        0.0
    } else if (hp2 - hp1).abs() <= PI {
        hp2 - hp1
    } else if hp2 - hp1 > PI {
        hp2 - hp1 - 2.0 * PI
    } else {
        hp2 - hp1 + 2.0 * PI
    };
    let dhh = 2.0 * (cp1 * cp2).sqrt() * (dh / 2.0).sin();
    let lbar = (l1 + l2) / 2.0;
    let cpbar = (cp1 + cp2) / 2.0;
    let hbar = if cp1 * cp2 == 0.0 {
        hp1 + hp2
    } else if (hp1 - hp2).abs() <= PI {
        (hp1 + hp2) / 2.0
    } else if hp1 + hp2 < 2.0 * PI {
        (hp1 + hp2 + 2.0 * PI) / 2.0
    } else {
        (hp1 + hp2 - 2.0 * PI) / 2.0
    };
    let deg = PI / 180.0;
    let t = 1.0 - 0.17 * (hbar - 30.0 * deg).cos() + 0.24 * (2.0 * hbar).cos() + 0.32 * (3.0 * hbar + 6.0 * deg).cos()
        - 0.20 * (4.0 * hbar - 63.0 * deg).cos();
    let dtheta = 30.0 * deg * (-((hbar / deg - 275.0) / 25.0).powi(2)).exp();
    let rc = 2.0 * (cpbar.powi(7) / (cpbar.powi(7) + 25f64.powi(7))).sqrt();
    let sl = 1.0 + 0.015 * (lbar - 50.0).powi(2) / (20.0 + (lbar - 50.0).powi(2)).sqrt();
    let sc = 1.0 + 0.045 * cpbar;
    let sh = 1.0 + 0.015 * cpbar * t;
    let rt = -(2.0 * dtheta).sin() * rc;
    ((dl / sl).powi(2) + (dc / sc).powi(2) + (dhh / sh).powi(2) + rt * (dc / sc) * (dhh / sh)).sqrt()
}

/// sRGB → Lab through the standard matrices, written out independently.
pub fn oracle_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) });
    let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
    let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
    let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.powf(1.0 / 3.0)
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}
