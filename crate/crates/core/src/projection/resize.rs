//! Image resampling with pixel-centre alignment and edge clamping.

fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let scale = src_len as f64 / dst_len as f64;
    ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64)
}

/// Bilinear resize of an interleaved `h × w × c` buffer.
pub(crate) fn bilinear(src: &[f64], h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow * c];
    for r in 0..oh {
        let sy = source_coord(r, h, oh);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for col in 0..ow {
            let sx = source_coord(col, w, ow);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(r * ow + col) * c + ch] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

pub(crate) fn nearest(src: &[bool], h: usize, w: usize, oh: usize, ow: usize) -> Vec<bool> {
    let pick = |dst: usize, src_len: usize, dst_len: usize| {
        (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize).min(src_len - 1)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        let y = pick(r, h, oh);
        for c in 0..ow {
            out.push(src[y * w + pick(c, w, ow)]);
        }
    }
    out
}
