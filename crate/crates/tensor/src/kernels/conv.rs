//! Direct-semantics 2-D convolution (cross-correlation), lowered to GEMM
//! through an im2col buffer, plus a dedicated depthwise path.

use crate::error::{Result, TensorError};
use crate::macs;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    /// Stride 1, "same" padding `dilation·(k−1)/2` for an odd kernel `k`.
    pub fn same(k: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (k - 1) / 2,
            dilation,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }
}

/// `floor((n + 2·padding − dilation·(k−1) − 1)/stride) + 1`.
pub fn out_extent(n: usize, k: usize, p: &Conv2dParams) -> Option<usize> {
    let span = p.dilation * (k - 1) + 1;
    let padded = n + 2 * p.padding;
    if padded < span || p.stride == 0 {
        return None;
    }
    Some((padded - span) / p.stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub cin_g: usize,
    pub cout_g: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub p: Conv2dParams,
}

pub(crate) fn geometry<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    p: Conv2dParams,
) -> Result<Geometry> {
    let [bn, cin, h, wd] = x.dims4("conv2d")?;
    let [cout, cin_g, kh, kw] = w.dims4("conv2d")?;
    let err = |dim: &'static str, expected: String, got: usize| TensorError::Dimension {
        op: "conv2d",
        dim,
        expected,
        got,
    };
    if p.groups == 0 || cin % p.groups != 0 {
        return Err(err("input channels", format!("a multiple of groups={}", p.groups), cin));
    }
    if cout % p.groups != 0 {
        return Err(err("output channels", format!("a multiple of groups={}", p.groups), cout));
    }
    if cin_g != cin / p.groups {
        return Err(err("weight input channels", format!("{}", cin / p.groups), cin_g));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![cout],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let oh = out_extent(h, kh, &p).ok_or_else(|| err("height", "large enough for the kernel".into(), h))?;
    let ow = out_extent(wd, kw, &p).ok_or_else(|| err("width", "large enough for the kernel".into(), wd))?;
    Ok(Geometry {
        b: bn,
        cin,
        h,
        w: wd,
        cout,
        cin_g,
        cout_g: cout / p.groups,
        kh,
        kw,
        oh,
        ow,
        p,
    })
}

impl Geometry {
    fn is_depthwise(&self) -> bool {
        self.cin_g == 1 && self.cout_g == 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.p.stride == 1 && self.p.padding == 0
    }

    fn taps(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    pub fn macs(&self) -> u64 {
        (self.b * self.cout * self.cin_g * self.kh * self.kw * self.oh * self.ow) as u64
    }

    /// Input row/col for an output coordinate and tap, or `None` in the padding.
    #[inline]
    fn src(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let pos = (o * self.p.stride + k * self.p.dilation) as isize - self.p.padding as isize;
        (pos >= 0 && (pos as usize) < n).then_some(pos as usize)
    }

    /// Fills `col` (`taps × oh·ow`) from input channels `c0..c0+cin_g` of one image.
    fn im2col<T: Real>(&self, img: &[T], c0: usize, col: &mut [T]) {
        let plane = self.h * self.w;
        let opix = self.oh * self.ow;
        for ci in 0..self.cin_g {
            let src = &img[(c0 + ci) * plane..(c0 + ci + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * opix;
                    let dst = &mut col[row..row + opix];
                    for oy in 0..self.oh {
                        let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.src(oy, ky, self.h) {
                            None => drow.fill(T::zero()),
                            Some(iy) => {
                                let srow = &src[iy * self.w..(iy + 1) * self.w];
                                for (ox, d) in drow.iter_mut().enumerate() {
                                    *d = match self.src(ox, kx, self.w) {
                                        Some(ix) => srow[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `col` back into input channels `c0..c0+cin_g` of one image.
    fn col2im<T: Real>(&self, col: &[T], c0: usize, img: &mut [T]) {
        let plane = self.h * self.w;
        let opix = self.oh * self.ow;
        for ci in 0..self.cin_g {
            let dst = &mut img[(c0 + ci) * plane..(c0 + ci + 1) * plane];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((ci * self.kh + ky) * self.kw + kx) * opix;
                    let src = &col[row..row + opix];
                    for oy in 0..self.oh {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        for ox in 0..self.ow {
                            if let Some(ix) = self.src(ox, kx, self.w) {
                                dst[iy * self.w + ix] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution of `x[B,Cin,H,W]` with `w[Cout,Cin/g,kh,kw]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: Conv2dParams,
) -> Result<Tensor<T>> {
    let g = geometry(x, w, bias, p)?;
    let mut out = Tensor::zeros(&[g.b, g.cout, g.oh, g.ow]);
    let opix = g.oh * g.ow;
    if g.is_depthwise() {
        depthwise_forward(&g, x.data(), w.data(), out.data_mut());
    } else {
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.taps() * opix] };
        let xin = x.data();
        let wd = w.data();
        let od = out.data_mut();
        for bi in 0..g.b {
            let img = &xin[bi * g.cin * g.h * g.w..(bi + 1) * g.cin * g.h * g.w];
            for gi in 0..g.p.groups {
                let c0 = gi * g.cin_g;
                let colref: &[T] = if g.is_pointwise() {
                    &img[c0 * opix..(c0 + g.cin_g) * opix]
                } else {
                    g.im2col(img, c0, &mut col);
                    &col
                };
                let wg = &wd[gi * g.cout_g * g.taps()..(gi + 1) * g.cout_g * g.taps()];
                let o0 = (bi * g.cout + gi * g.cout_g) * opix;
                let og = &mut od[o0..o0 + g.cout_g * opix];
                T::gemm(
                    g.cout_g,
                    g.taps(),
                    opix,
                    T::one(),
                    wg,
                    g.taps() as isize,
                    1,
                    colref,
                    opix as isize,
                    1,
                    T::zero(),
                    og,
                    opix as isize,
                    1,
                );
            }
        }
    }
    if let Some(b) = bias {
        let od = out.data_mut();
        for bi in 0..g.b {
            for (co, &bv) in b.data().iter().enumerate() {
                let o0 = (bi * g.cout + co) * opix;
                for v in &mut od[o0..o0 + opix] {
                    *v += bv;
                }
            }
        }
    }
    macs::add(g.macs());
    Ok(out)
}

fn depthwise_forward<T: Real>(g: &Geometry, x: &[T], w: &[T], out: &mut [T]) {
    let plane = g.h * g.w;
    let opix = g.oh * g.ow;
    let kk = g.kh * g.kw;
    for bi in 0..g.b {
        for c in 0..g.cout {
            let src = &x[(bi * g.cin + c) * plane..(bi * g.cin + c + 1) * plane];
            let wc = &w[c * kk..(c + 1) * kk];
            let dst = &mut out[(bi * g.cout + c) * opix..(bi * g.cout + c + 1) * opix];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wc[ky * g.kw + kx];
                    for oy in 0..g.oh {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                dst[oy * g.ow + ox] += wv * src[iy * g.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub struct Conv2dGrads<T> {
    pub x: Option<Tensor<T>>,
    pub w: Option<Tensor<T>>,
    pub b: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    p: Conv2dParams,
    need: [bool; 3],
) -> Result<Conv2dGrads<T>> {
    let g = geometry(x, w, None, p)?;
    let opix = g.oh * g.ow;
    let gyd = gy.data();
    let xd = x.data();
    let wd = w.data();
    let mut gx = need[0].then(|| Tensor::zeros(x.shape()));
    let mut gw = need[1].then(|| Tensor::zeros(w.shape()));
    let gb = need[2].then(|| {
        let mut gb = Tensor::zeros(&[g.cout]);
        for bi in 0..g.b {
            for co in 0..g.cout {
                let o0 = (bi * g.cout + co) * opix;
                gb.data_mut()[co] += gyd[o0..o0 + opix].iter().copied().sum::<T>();
            }
        }
        gb
    });
    if g.is_depthwise() {
        depthwise_backward(&g, xd, wd, gyd, gx.as_mut(), gw.as_mut());
        return Ok(Conv2dGrads { x: gx, w: gw, b: gb });
    }
    let taps = g.taps();
    let mut col = vec![T::zero(); taps * opix];
    let mut gcol = vec![T::zero(); taps * opix];
    let img_len = g.cin * g.h * g.w;
    for bi in 0..g.b {
        let img = &xd[bi * img_len..(bi + 1) * img_len];
        for gi in 0..g.p.groups {
            let c0 = gi * g.cin_g;
            let o0 = (bi * g.cout + gi * g.cout_g) * opix;
            let gyg = &gyd[o0..o0 + g.cout_g * opix];
            let wrange = gi * g.cout_g * taps..(gi + 1) * g.cout_g * taps;
            if let Some(gw) = gw.as_mut() {
                let colref: &[T] = if g.is_pointwise() {
                    &img[c0 * opix..(c0 + g.cin_g) * opix]
                } else {
                    g.im2col(img, c0, &mut col);
                    &col
                };
                // gW[cout_g, taps] += gy[cout_g, opix] · colᵀ[opix, taps]
                T::gemm(
                    g.cout_g,
                    opix,
                    taps,
                    T::one(),
                    gyg,
                    opix as isize,
                    1,
                    colref,
                    1,
                    opix as isize,
                    T::one(),
                    &mut gw.data_mut()[wrange.clone()],
                    taps as isize,
                    1,
                );
            }
            if let Some(gx) = gx.as_mut() {
                let wg = &wd[wrange];
                let gimg = &mut gx.data_mut()[bi * img_len..(bi + 1) * img_len];
                if g.is_pointwise() {
                    let dst = &mut gimg[c0 * opix..(c0 + g.cin_g) * opix];
                    T::gemm(
                        taps,
                        g.cout_g,
                        opix,
                        T::one(),
                        wg,
                        1,
                        taps as isize,
                        gyg,
                        opix as isize,
                        1,
                        T::one(),
                        dst,
                        opix as isize,
                        1,
                    );
                } else {
                    // gcol[taps, opix] = Wᵀ[taps, cout_g] · gy[cout_g, opix]
                    T::gemm(
                        taps,
                        g.cout_g,
                        opix,
                        T::one(),
                        wg,
                        1,
                        taps as isize,
                        gyg,
                        opix as isize,
                        1,
                        T::zero(),
                        &mut gcol,
                        opix as isize,
                        1,
                    );
                    g.col2im(&gcol, c0, gimg);
                }
            }
        }
    }
    Ok(Conv2dGrads { x: gx, w: gw, b: gb })
}

fn depthwise_backward<T: Real>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    gy: &[T],
    mut gx: Option<&mut Tensor<T>>,
    mut gw: Option<&mut Tensor<T>>,
) {
    let plane = g.h * g.w;
    let opix = g.oh * g.ow;
    let kk = g.kh * g.kw;
    for bi in 0..g.b {
        for c in 0..g.cout {
            let xoff = (bi * g.cin + c) * plane;
            let gys = &gy[(bi * g.cout + c) * opix..(bi * g.cout + c + 1) * opix];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let widx = c * kk + ky * g.kw + kx;
                    let wv = w[widx];
                    let mut acc = T::zero();
                    for oy in 0..g.oh {
                        let Some(iy) = g.src(oy, ky, g.h) else { continue };
                        for ox in 0..g.ow {
                            if let Some(ix) = g.src(ox, kx, g.w) {
                                let gv = gys[oy * g.ow + ox];
                                let xi = xoff + iy * g.w + ix;
                                acc += gv * x[xi];
                                if let Some(gx) = gx.as_deref_mut() {
                                    gx.data_mut()[xi] += gv * wv;
                                }
                            }
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
}
