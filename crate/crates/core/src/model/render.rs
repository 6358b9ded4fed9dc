//! Differentiable rendering of decoder slices: CTF, Hartley-domain translation,
//! inverse transform.

use nalgebra::Matrix3;
use ndarray::{Array2, Array3};

use super::decoder::{Decoder, DecoderCache};
use crate::error::Result;
use crate::nn::{cast, Real};
use crate::numerics::fft::{centered_freq, ifft3_centered, partner_index, CenteredFft2, Complex64};
use crate::numerics::{SliceCoords, Volume};

/// Total order that picks exactly one of `q`, `−q` (for `q ≠ 0`) as canonical.
/// Returns `+1` when `q` is canonical, `−1` otherwise.
#[inline]
pub fn hermitian_sign(q: [f64; 3]) -> f64 {
    let flip = q[2] > 0.0 || (q[2] == 0.0 && (q[1] > 0.0 || (q[1] == 0.0 && q[0] > 0.0)));
    if flip {
        -1.0
    } else {
        1.0
    }
}

/// Frequencies inside the inscribed disc `|k| < 1/2`, grouped into `±k` pairs.
#[derive(Debug, Clone)]
pub struct HalfSlice {
    l: usize,
    /// Representative of each pair (DC included).
    rep_k: Vec<[f64; 2]>,
    rep_idx: Vec<usize>,
    /// Flat index of `−k`; equals `rep_idx` for DC.
    rep_partner: Vec<usize>,
    /// Every frequency in the disc with its partner.
    disc_idx: Vec<usize>,
    disc_partner: Vec<usize>,
    disc_k: Vec<[f64; 2]>,
}

impl HalfSlice {
    pub fn new(l: usize) -> Self {
        let mut hs = HalfSlice {
            l,
            rep_k: Vec::new(),
            rep_idx: Vec::new(),
            rep_partner: Vec::new(),
            disc_idx: Vec::new(),
            disc_partner: Vec::new(),
            disc_k: Vec::new(),
        };
        for iy in 0..l {
            for ix in 0..l {
                let k = [centered_freq(ix, l), centered_freq(iy, l)];
                if k[0] * k[0] + k[1] * k[1] >= 0.25 {
                    continue;
                }
                let idx = iy * l + ix;
                let partner = partner_index(iy, l) * l + partner_index(ix, l);
                hs.disc_idx.push(idx);
                hs.disc_partner.push(partner);
                hs.disc_k.push(k);
                if k[1] > 0.0 || (k[1] == 0.0 && k[0] >= 0.0) {
                    hs.rep_k.push(k);
                    hs.rep_idx.push(idx);
                    hs.rep_partner.push(partner);
                }
            }
        }
        hs
    }

    pub fn side(&self) -> usize {
        self.l
    }

    /// Number of network evaluations per slice.
    pub fn n_points(&self) -> usize {
        self.rep_k.len()
    }

    pub fn disc_len(&self) -> usize {
        self.disc_idx.len()
    }
}

/// Activations kept for [`Renderer::backward`].
pub struct RenderCache<T> {
    dec: DecoderCache<T>,
    rots: Vec<Matrix3<f64>>,
    sign: Vec<f64>,
    slices: Vec<Vec<f64>>,
    ctfs: Vec<Vec<f64>>,
    cos_phi: Vec<Vec<f64>>,
    sin_phi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RenderGrads<T> {
    pub rot: Vec<Matrix3<f64>>,
    pub t: Vec<[f64; 2]>,
    pub z: Option<Array2<T>>,
}

/// Batched forward/backward through decoder → slice → CTF → translation.
/// Outputs are centered Hartley coefficients of the predicted images.
pub struct Renderer {
    geo: HalfSlice,
    fft: CenteredFft2<f64>,
}

impl Renderer {
    pub fn new(l: usize) -> Result<Self> {
        Ok(Renderer {
            geo: HalfSlice::new(l),
            fft: CenteredFft2::new(l)?,
        })
    }

    pub fn geometry(&self) -> &HalfSlice {
        &self.geo
    }

    pub fn side(&self) -> usize {
        self.geo.l
    }

    fn canonical_points<T: Real>(&self, rots: &[Matrix3<f64>]) -> (Array2<T>, Vec<f64>) {
        let p = self.geo.n_points();
        let mut q = Array2::<T>::zeros((rots.len() * p, 3));
        let mut sign = Vec::with_capacity(rots.len() * p);
        for (i, r) in rots.iter().enumerate() {
            for (j, k) in self.geo.rep_k.iter().enumerate() {
                let v = [
                    r[(0, 0)] * k[0] + r[(1, 0)] * k[1],
                    r[(0, 1)] * k[0] + r[(1, 1)] * k[1],
                    r[(0, 2)] * k[0] + r[(1, 2)] * k[1],
                ];
                let s = hermitian_sign(v);
                let row = i * p + j;
                for c in 0..3 {
                    q[[row, c]] = cast(s * v[c]);
                }
                sign.push(s);
            }
        }
        (q, sign)
    }

    /// Renders the batch. `ctfs` are `L × L` maps, `z` is `n × d`.
    pub fn forward<T: Real>(
        &self,
        dec: &Decoder<T>,
        rots: &[Matrix3<f64>],
        ts: &[[f64; 2]],
        ctfs: &[&Array2<f64>],
        z: &Array2<T>,
    ) -> (Vec<Array2<f64>>, RenderCache<T>) {
        let n = rots.len();
        assert!(ts.len() == n && ctfs.len() == n && z.nrows() == n, "batch sizes");
        let l = self.geo.l;
        let p = self.geo.n_points();
        let (q, sign) = self.canonical_points::<T>(rots);
        let (ab, dcache) = dec.forward(&q, z, p);
        let tau = 2.0 * std::f64::consts::PI;
        let mut out = Vec::with_capacity(n);
        let mut slices = Vec::with_capacity(n);
        let mut ctf_v = Vec::with_capacity(n);
        let mut cos_v = Vec::with_capacity(n);
        let mut sin_v = Vec::with_capacity(n);
        for i in 0..n {
            let mut h = vec![0.0; l * l];
            for j in 0..p {
                let row = i * p + j;
                let a = ab[[row, 0]].to_f64().unwrap_or(f64::NAN);
                let b = ab[[row, 1]].to_f64().unwrap_or(f64::NAN);
                let (idx, partner) = (self.geo.rep_idx[j], self.geo.rep_partner[j]);
                if idx == partner {
                    h[idx] = a;
                } else {
                    let sb = sign[row] * b;
                    h[idx] = a - sb;
                    h[partner] = a + sb;
                }
            }
            let c = ctfs[i].as_slice().expect("standard layout");
            let nd = self.geo.disc_len();
            let (mut cs, mut sn, mut cv) = (Vec::with_capacity(nd), Vec::with_capacity(nd), Vec::with_capacity(nd));
            let mut hp = Array2::<f64>::zeros((l, l));
            let hp_s = hp.as_slice_mut().expect("standard layout");
            for m in 0..nd {
                let k = self.geo.disc_k[m];
                let phi = tau * (k[0] * ts[i][0] + k[1] * ts[i][1]);
                let (s_, c_) = phi.sin_cos();
                let idx = self.geo.disc_idx[m];
                let ck = c[idx];
                hp_s[idx] = ck * (h[idx] * c_ + h[self.geo.disc_partner[m]] * s_);
                cs.push(c_);
                sn.push(s_);
                cv.push(ck);
            }
            out.push(hp);
            slices.push(h);
            ctf_v.push(cv);
            cos_v.push(cs);
            sin_v.push(sn);
        }
        (
            out,
            RenderCache {
                dec: dcache,
                rots: rots.to_vec(),
                sign,
                slices,
                ctfs: ctf_v,
                cos_phi: cos_v,
                sin_phi: sin_v,
            },
        )
    }

    /// Back-propagates `∂loss/∂H'` into decoder parameters and, on request,
    /// rotations, translations and latents.
    pub fn backward<T: Real>(
        &self,
        dec: &mut Decoder<T>,
        cache: RenderCache<T>,
        g_out: &[Array2<f64>],
        need_pose_grad: bool,
        need_z_grad: bool,
    ) -> RenderGrads<T> {
        let n = cache.rots.len();
        let l = self.geo.l;
        let p = self.geo.n_points();
        let nd = self.geo.disc_len();
        let tau = 2.0 * std::f64::consts::PI;
        let mut g_ab = Array2::<T>::zeros((n * p, 2));
        let mut g_t = vec![[0.0; 2]; n];
        for i in 0..n {
            let g = g_out[i].as_slice().expect("standard layout");
            let h = &cache.slices[i];
            let mut gh = vec![0.0; l * l];
            for m in 0..nd {
                let idx = self.geo.disc_idx[m];
                let par = self.geo.disc_partner[m];
                let ck = cache.ctfs[i][m];
                let (c_, s_) = (cache.cos_phi[i][m], cache.sin_phi[i][m]);
                gh[idx] += ck * c_ * g[idx];
                gh[par] += ck * s_ * g[idx];
                let dphi = ck * g[idx] * (h[par] * c_ - h[idx] * s_);
                let k = self.geo.disc_k[m];
                g_t[i][0] += dphi * tau * k[0];
                g_t[i][1] += dphi * tau * k[1];
            }
            for j in 0..p {
                let row = i * p + j;
                let (idx, par) = (self.geo.rep_idx[j], self.geo.rep_partner[j]);
                if idx == par {
                    g_ab[[row, 0]] = cast(gh[idx]);
                } else {
                    g_ab[[row, 0]] = cast(gh[idx] + gh[par]);
                    g_ab[[row, 1]] = cast(cache.sign[row] * (gh[par] - gh[idx]));
                }
            }
        }
        let sign = cache.sign;
        let rots_len = cache.rots.len();
        let (g_q, g_z) = dec.backward(cache.dec, &g_ab, need_pose_grad, need_z_grad);
        let mut g_rot = vec![Matrix3::zeros(); rots_len];
        if let Some(g_q) = g_q {
            for i in 0..n {
                for (j, k) in self.geo.rep_k.iter().enumerate() {
                    let row = i * p + j;
                    let s = sign[row];
                    for c in 0..3 {
                        let gq = s * g_q[[row, c]].to_f64().unwrap_or(f64::NAN);
                        g_rot[i][(0, c)] += k[0] * gq;
                        g_rot[i][(1, c)] += k[1] * gq;
                    }
                }
            }
        }
        RenderGrads {
            rot: g_rot,
            t: g_t,
            z: g_z,
        }
    }

    pub fn to_image(&mut self, h: &Array2<f64>) -> Array2<f64> {
        let l = self.geo.l;
        let mut out = Array2::<f64>::zeros((l, l));
        self.fft.inverse_hartley(
            h.as_slice().expect("standard layout"),
            out.as_slice_mut().expect("standard layout"),
        );
        out
    }

    pub fn hartley(&mut self, img: &Array2<f64>) -> Array2<f64> {
        let l = self.geo.l;
        let mut out = Array2::<f64>::zeros((l, l));
        self.fft.hartley(
            img.as_standard_layout().as_slice().expect("standard layout"),
            out.as_slice_mut().expect("standard layout"),
        );
        out
    }
}

fn eval_points<T: Real>(dec: &Decoder<T>, z: &[f64], pts: &[[f64; 3]]) -> Vec<f64> {
    let d = dec.latent_dim();
    let zrow = Array2::from_shape_fn((1, d), |(_, j)| cast::<T>(z[j]));
    let mut values = Vec::with_capacity(pts.len() * 2);
    let chunk = 4096;
    for part in pts.chunks(chunk) {
        let mut q = Array2::<T>::zeros((part.len(), 3));
        let mut signs = Vec::with_capacity(part.len());
        for (r, v) in part.iter().enumerate() {
            let s = hermitian_sign(*v);
            signs.push(s);
            for c in 0..3 {
                q[[r, c]] = cast(s * v[c]);
            }
        }
        let zs = Array2::from_shape_fn((part.len(), d), |(_, j)| zrow[[0, j]]);
        let (ab, _) = dec.forward(&q, &zs, 1);
        for (r, v) in part.iter().enumerate() {
            let a = ab[[r, 0]].to_f64().unwrap_or(f64::NAN);
            let b = ab[[r, 1]].to_f64().unwrap_or(f64::NAN);
            if v.iter().all(|&x| x == 0.0) {
                values.extend([a, 0.0]);
            } else {
                values.extend([a, signs[r] * b]);
            }
        }
    }
    values
}

/// Hartley coefficients `H = Re V̂ − Im V̂` at the given slice coordinates;
/// coordinates outside the ball `|q| < 1/2` yield zero.
pub fn decode_slice<T: Real>(dec: &Decoder<T>, z: &[f64], coords: &SliceCoords) -> Array2<f64> {
    let l = coords.side();
    let pts = coords.points();
    let inside: Vec<usize> = (0..pts.len())
        .filter(|&i| pts[i].iter().map(|v| v * v).sum::<f64>() < 0.25)
        .collect();
    let sel: Vec<[f64; 3]> = inside.iter().map(|&i| pts[i]).collect();
    let vals = eval_points(dec, z, &sel);
    let mut out = Array2::<f64>::zeros((l, l));
    let flat = out.as_slice_mut().expect("standard layout");
    for (n, &i) in inside.iter().enumerate() {
        flat[i] = vals[2 * n] - vals[2 * n + 1];
    }
    out
}

/// Real-space volume at latent `z`. `frame` maps output-grid frequencies to
/// decoder coordinates (`q = A k`); use it to express the result in another
/// reference frame, including a mirrored one.
pub fn extract_volume<T: Real>(
    dec: &Decoder<T>,
    z: &[f64],
    l: usize,
    apix: f64,
    frame: Option<&Matrix3<f64>>,
) -> Result<Volume> {
    let a = frame.copied().unwrap_or_else(Matrix3::identity);
    let mut pts = Vec::new();
    let mut where_ = Vec::new();
    for iz in 0..l {
        for iy in 0..l {
            for ix in 0..l {
                let k = [centered_freq(ix, l), centered_freq(iy, l), centered_freq(iz, l)];
                if k.iter().map(|v| v * v).sum::<f64>() >= 0.25 {
                    continue;
                }
                let q = a * nalgebra::Vector3::new(k[0], k[1], k[2]);
                pts.push([q.x, q.y, q.z]);
                where_.push((iz, iy, ix));
            }
        }
    }
    let vals = eval_points(dec, z, &pts);
    let mut spec = Array3::<Complex64>::zeros((l, l, l));
    for (n, &(iz, iy, ix)) in where_.iter().enumerate() {
        spec[[iz, iy, ix]] = Complex64::new(vals[2 * n], vals[2 * n + 1]);
    }
    // Hermitian pairs evaluate to exact conjugates, so the imaginary part is rounding only.
    let real = ifft3_centered(&spec)?.mapv(|c| c.re);
    Volume::new(real, apix)
}
