//! Register- and thread-blocked convolution as a matrix multiply.
//!
//! Rows (M) are output pixels flattened over `img:y:x`, columns (N) output
//! channels, and the reduction (K) runs over `in_chan:y:x` of the filter
//! window. Each thread owns an `MNt.0 x MNt.1` block of accumulators; the
//! register block and the `Kb`-fold unrolled reduction are expanded here,
//! so the kernel text is straight-line code inside a single K loop.
//! Filters arrive as `in_chan:y:x:out_chan` with `out_chan` padded to a
//! whole number of channel tiles, which makes each thread's channels
//! contiguous and loadable as vectors.

use std::collections::BTreeMap;

use super::*;
use crate::cucl::ir::Ty;
use crate::cucl::ArgDecl;

/// Geometry derived from an op and its tuning parameters.
struct Geom {
    rank: Variant,
    m: usize,
    n: usize,
    k: usize,
    /// Pixels / channels per workgroup tile.
    mt: usize,
    nt: usize,
    n_pad: usize,
    groups_n: usize,
    groups_m: usize,
}

fn geom(variant: Variant, op: &ConvOp, t: &TuneParams) -> Geom {
    let o = &op.out;
    let m = op.size(o, "img") * op.size(o, "y") * op.size(o, "x");
    let n = op.params.out_chans;
    let k = op.in_chans() * op.params.ksz * op.params.ksz;
    let mt = t.mnb.0 * t.mnt.0;
    let nt = t.mnb.1 * t.mnt.1;
    let n_pad = n.div_ceil(nt) * nt;
    Geom { rank: variant, m, n, k, mt, nt, n_pad, groups_n: n_pad / nt, groups_m: m.div_ceil(mt) }
}

pub(super) fn check(variant: Variant, op: &ConvOp, t: &TuneParams) -> Result<(), GenError> {
    t.validate()?;
    let p = op.params;
    let (iy, ix) = (op.size(&op.input, "y"), op.size(&op.input, "x"));
    match variant {
        Variant::Conv1x1 if p.ksz != 1 || p.pad != 0 => return inapplicable(variant, "needs a 1x1 unpadded window"),
        Variant::ConvFc if p.ksz != iy || p.ksz != ix || p.pad != 0 => {
            return inapplicable(variant, "window must cover the whole unpadded input")
        }
        _ => {}
    }
    let g = geom(variant, op, t);
    if g.m < t.mnt.0 {
        return inapplicable(variant, format!("{} output pixels is fewer than the register block {}", g.m, t.mnt.0));
    }
    Ok(())
}

pub fn gen_conv_tiled(op: &ConvOp, t: &TuneParams, mode: InstMode) -> Result<KernelPlan, GenError> {
    gen(Variant::ConvTiled, op, t, mode)
}

pub fn gen_conv_1x1(op: &ConvOp, t: &TuneParams, mode: InstMode) -> Result<KernelPlan, GenError> {
    gen(Variant::Conv1x1, op, t, mode)
}

pub fn gen_conv_fc(op: &ConvOp, t: &TuneParams, mode: InstMode) -> Result<KernelPlan, GenError> {
    gen(Variant::ConvFc, op, t, mode)
}

/// Filter layout the family reads.
pub(super) fn filts_layout(op: &ConvOp, n_pad: usize) -> DimsSpec {
    let k = op.params.ksz;
    DimsSpec::new(&["in_chan", "y", "x", "out_chan"], &[op.in_chans(), k, k, n_pad]).expect("valid")
}

struct Text<'a> {
    op: &'a ConvOp,
    t: &'a TuneParams,
    g: Geom,
    s: String,
    /// `M`, `K` as template expressions.
    m_expr: String,
    k_expr: String,
    in_dense: bool,
}

impl Text<'_> {
    fn line(&mut self, indent: usize, l: &str) {
        for _ in 0..indent {
            self.s.push_str("  ");
        }
        self.s.push_str(l);
        self.s.push('\n');
    }

    /// Reduction index `kexpr` → input offset `ko`, plus `ky`/`kx` for padded
    /// windows.
    fn k_decode(&self, kexpr: &str, pre: &str) -> Vec<String> {
        let (ics, ys, xs) = (st("in", "chan"), st("in", "y"), st("in", "x"));
        match self.g.rank {
            Variant::Conv1x1 => vec![format!("int {pre}ko = {kexpr}*{ics};")],
            Variant::ConvFc if self.in_dense => vec![format!("int {pre}ko = {kexpr};")],
            _ => {
                let (fy, fx) = (sz("filts", "y"), sz("filts", "x"));
                vec![
                    format!("int {pre}kic = {kexpr} / ({fy}*{fx});"),
                    format!("int {pre}ky = ({kexpr} / {fx}) % {fy};"),
                    format!("int {pre}kx = {kexpr} % {fx};"),
                    format!("int {pre}ko = {pre}kic*{ics} + {pre}ky*{ys} + {pre}kx*{xs};"),
                ]
            }
        }
    }

    fn padded(&self) -> bool {
        self.g.rank == Variant::ConvTiled && self.op.params.pad > 0
    }

    /// Guarded read of input pixel row `m` (vars with suffix `sfx`) at `ko`.
    fn in_read(&self, sfx: &str, pre: &str) -> String {
        let read = format!("in[ib{sfx} + {pre}ko]");
        if !self.padded() {
            return read;
        }
        let (iy, ix) = (sz("in", "y"), sz("in", "x"));
        format!(
            "(iy{sfx} + {pre}ky >= 0 && iy{sfx} + {pre}ky < {iy} && ix{sfx} + {pre}kx >= 0 && ix{sfx} + {pre}kx < {ix}) ? {read} : 0.0f"
        )
    }

    /// Pixel decode of (clamped) row index `mexpr` into vars with suffix `sfx`.
    fn m_decode(&mut self, ind: usize, mexpr: &str, sfx: &str, out_base: bool) {
        let (oy, ox) = (sz("out", "y"), sz("out", "x"));
        let (is_img, is_y, is_x) = (st("in", "img"), st("in", "y"), st("in", "x"));
        let clamp = if !self.g.m.is_multiple_of(self.g.mt) {
            format!("({mexpr} < {m}) ? {mexpr} : {m} - 1", m = self.m_expr)
        } else {
            mexpr.to_string()
        };
        self.line(ind, &format!("int mc{sfx} = {clamp};"));
        if self.g.rank == Variant::ConvFc {
            self.line(ind, &format!("int ib{sfx} = mc{sfx}*{is_img};"));
            if out_base {
                self.line(ind, &format!("int ob{sfx} = mc{sfx}*{};", st("out", "img")));
            }
            return;
        }
        self.line(ind, &format!("int img{sfx} = mc{sfx} / ({oy}*{ox});"));
        self.line(ind, &format!("int py{sfx} = (mc{sfx} / {ox}) % {oy};"));
        self.line(ind, &format!("int px{sfx} = mc{sfx} % {ox};"));
        let (s, p) = (self.op.params.stride, self.op.params.pad);
        if self.padded() {
            self.line(ind, &format!("int iy{sfx} = py{sfx}*{s} - {p};"));
            self.line(ind, &format!("int ix{sfx} = px{sfx}*{s} - {p};"));
            self.line(ind, &format!("int ib{sfx} = img{sfx}*{is_img} + iy{sfx}*{is_y} + ix{sfx}*{is_x};"));
        } else {
            self.line(ind, &format!("int ib{sfx} = img{sfx}*{is_img} + py{sfx}*{}*{is_y} + px{sfx}*{}*{is_x};", s, s));
        }
        if out_base {
            self.line(
                ind,
                &format!("int ob{sfx} = img{sfx}*{} + py{sfx}*{} + px{sfx}*{};", st("out", "img"), st("out", "y"), st("out", "x")),
            );
        }
    }

    /// Filter element for thread channel `nj` of reduction step `u`.
    fn b_val(&self, nj: usize) -> String {
        let vw = self.t.vw;
        if self.t.local_filts || vw == 1 {
            format!("b_{nj}")
        } else {
            format!("b_{}.s{}", nj / vw, nj % vw)
        }
    }

    /// Straight-line copies staging `rows` reduction steps starting at
    /// `kbase` into local memory.
    fn stage(&mut self, ind: usize, rows: usize) {
        let threads = self.t.threads();
        self.line(ind, "BARRIER_SYNC;");
        if self.t.local_filts {
            let nt = self.g.nt;
            self.line(ind, &format!("int fsrc = kbase*{} + gn*{nt};", st("filts", "x")));
            let single = self.g.groups_n == 1;
            let fx = st("filts", "x");
            for l in gen_coop_load_with(rows * nt, threads, |off, ix| {
                let src = if single { format!("fsrc+{ix}") } else { format!("fsrc + ({ix})/{nt}*{fx} + ({ix})%{nt}") };
                format!("filts_buf[{off}+thread_id] = filts[{src}];")
            }) {
                self.line(ind, &l);
            }
        }
        if self.t.local_in {
            let mt = self.g.mt;
            let mut stmts = Vec::new();
            for l in gen_coop_load_with(rows * mt, threads, |off, ix| {
                let mut b = Text { s: String::new(), m_expr: self.m_expr.clone(), k_expr: self.k_expr.clone(), g: geom(self.g.rank, self.op, self.t), ..*self };
                b.m_decode(0, &format!("gm*{mt} + ({ix})%{mt}"), "_l", false);
                let mut body: String = b.s.lines().map(|l| format!("{l} ")).collect();
                for d in self.k_decode(&format!("(kbase + ({ix})/{mt})"), "l") {
                    body.push_str(&d);
                    body.push(' ');
                }
                format!("{{ {body}in_buf[{off}+thread_id] = {}; }}", self.in_read("_l", "l"))
            }) {
                stmts.push(l);
            }
            for l in stmts {
                self.line(ind, &l);
            }
        }
        self.line(ind, "BARRIER_SYNC;");
    }

    /// One reduction step `u` of a chunk starting at `kbase`.
    fn step(&mut self, ind: usize, u: usize) {
        let (t0, t1, vw) = (self.t.mnt.0, self.t.mnt.1, self.t.vw);
        self.line(ind, "{");
        let i = ind + 1;
        self.line(i, &format!("int k = kbase + {u};"));
        if self.t.local_in {
            for mi in 0..t0 {
                self.line(i, &format!("float a_{mi} = in_buf[{} + io + {mi}];", u * self.g.mt));
            }
        } else {
            for d in self.k_decode("k", "") {
                self.line(i, &d);
            }
            for mi in 0..t0 {
                let r = self.in_read(&format!("_{mi}"), "");
                self.line(i, &format!("float a_{mi} = {r};"));
            }
        }
        if self.t.local_filts {
            for nj in 0..t1 {
                self.line(i, &format!("float b_{nj} = filts_buf[{} + fo + {nj}];", u * self.g.nt));
            }
        } else {
            let ty = Ty::Float(vw as u8);
            let row = if vw == 1 { st("filts", "x") } else { format!("({}/{vw})", st("filts", "x")) };
            for j in 0..t1 / vw {
                self.line(i, &format!("{ty} b_{j} = filts[k*{row} + nv0 + {j}];"));
            }
        }
        for mi in 0..t0 {
            for nj in 0..t1 {
                let b = self.b_val(nj);
                self.line(i, &format!("acc_{mi}_{nj} = fma(a_{mi}, {b}, acc_{mi}_{nj});"));
            }
        }
        self.line(ind, "}");
    }

    fn chunk(&mut self, ind: usize, rows: usize) {
        if self.t.local_filts || self.t.local_in {
            self.stage(ind, rows);
        }
        for u in 0..rows {
            self.step(ind, u);
        }
    }

    fn body(&mut self) {
        let (t0, t1) = self.t.mnt;
        let (b1, vw) = (self.t.mnb.1, self.t.vw);
        let (mt, nt) = (self.g.mt, self.g.nt);
        let gn = self.g.groups_n;
        self.line(1, "int thread_id = LOCAL_ID_1D;");
        self.line(1, &format!("int gm = GROUP_ID_1D / {gn};"));
        self.line(1, &format!("int gn = GROUP_ID_1D % {gn};"));
        self.line(1, &format!("int tm = thread_id / {b1};"));
        self.line(1, &format!("int tn = thread_id % {b1};"));
        self.line(1, &format!("int m0 = gm*{mt} + tm*{t0};"));
        self.line(1, &format!("int n0 = gn*{nt} + tn*{t1};"));
        if self.t.local_in {
            self.line(1, &format!("int io = tm*{t0};"));
        }
        if self.t.local_filts {
            self.line(1, &format!("int fo = tn*{t1};"));
        } else {
            self.line(1, &format!("int nv0 = gn*{} + tn*{};", nt / vw, t1 / vw));
        }
        for mi in 0..t0 {
            // rows past M compute on a clamped pixel; their stores are skipped
            self.m_decode(1, &format!("m0 + {mi}"), &format!("_{mi}"), true);
        }
        for mi in 0..t0 {
            for nj in 0..t1 {
                self.line(1, &format!("float acc_{mi}_{nj} = 0.0f;"));
            }
        }
        let (kb, k) = (self.t.kb, self.g.k);
        if k >= kb {
            self.line(1, &format!("for (int kc = 0; kc < ({}) / {kb}; ++kc) {{", self.k_expr));
            self.line(2, &format!("int kbase = kc*{kb};"));
            self.chunk(2, kb);
            self.line(1, "}");
        }
        if k % kb != 0 {
            // remainder, peeled and fully unrolled
            self.line(1, "{");
            self.line(2, &format!("int kbase = ({}) / {kb} * {kb};", self.k_expr));
            self.chunk(2, k % kb);
            self.line(1, "}");
        }
        let n_guard = !self.g.n.is_multiple_of(nt);
        let m_guard = !self.g.m.is_multiple_of(mt);
        for nj in 0..t1 {
            let read = format!("biases[(n0 + {nj})*{}]", st("biases", "out_chan"));
            let v = if n_guard { format!("(n0 + {nj} < {}) ? {read} : 0.0f", sz("out", "chan")) } else { read };
            self.line(1, &format!("float bias_{nj} = {v};"));
        }
        for mi in 0..t0 {
            for nj in 0..t1 {
                let mut conds = Vec::new();
                if m_guard {
                    conds.push(format!("m0 + {mi} < {}", self.m_expr));
                }
                if n_guard {
                    conds.push(format!("n0 + {nj} < {}", sz("out", "chan")));
                }
                let v = format!("v_{mi}_{nj}");
                let store = format!(
                    "float {v} = acc_{mi}_{nj} + bias_{nj}; out[ob_{mi} + (n0 + {nj})*{}] = {};",
                    st("out", "chan"),
                    write_xform(self.op.act, &v)
                );
                if conds.is_empty() {
                    self.line(1, &format!("{{ {store} }}"));
                } else {
                    self.line(1, &format!("if ({}) {{ {store} }}", conds.join(" && ")));
                }
            }
        }
    }
}

fn gen(variant: Variant, op: &ConvOp, t: &TuneParams, mode: InstMode) -> Result<KernelPlan, GenError> {
    check(variant, op, t)?;
    let g = geom(variant, op, t);
    let mut text = Text {
        op,
        t,
        m_expr: format!("{}*{}*{}", sz("out", "img"), sz("out", "y"), sz("out", "x")),
        k_expr: format!("{}*{}*{}", sz("filts", "in_chan"), sz("filts", "y"), sz("filts", "x")),
        in_dense: op.input.is_dense(),
        s: String::new(),
        g,
    };
    if t.local_filts {
        text.line(1, &format!("LOCAL_MEM float filts_buf[{}];", t.kb * text.g.nt));
    }
    if t.local_in {
        text.line(1, &format!("LOCAL_MEM float in_buf[{}];", t.kb * text.g.mt));
    }
    text.body();
    let filts_elem = if t.local_filts { Ty::Float(1) } else { Ty::Float(t.vw as u8) };
    let tpl = CuclTemplate::new(
        variant.name(),
        vec![
            ArgDecl::input("in", &CANONICAL),
            ArgDecl::input("filts", &["in_chan", "y", "x", "out_chan"]).with_elem(filts_elem),
            ArgDecl::input("biases", &["out_chan"]),
            ArgDecl::output("out", &CANONICAL),
        ],
        &text.s,
        &[],
    )?;
    let bindings = BTreeMap::from([
        ("in".to_string(), op.input.clone()),
        ("filts".to_string(), filts_layout(op, text.g.n_pad)),
        ("biases".to_string(), op.biases_dims()),
        ("out".to_string(), op.out.clone()),
    ]);
    let launch = LaunchConfig::new(text.g.groups_m * text.g.groups_n, t.threads());
    Ok(KernelPlan::new(variant, Some(*t), tpl, bindings, &[], mode, launch, &["in", "filts", "biases"]))
}
