//! Cooperative loads: N threads copy W words, emitted as straight-line code.

/// Copy of `w` words from `src` into `dst` by `n` threads indexed by
/// `thread_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoopLoadSpec {
    pub w: usize,
    pub n: usize,
    pub src: String,
    pub dst: String,
}

impl CoopLoadSpec {
    pub fn new(w: usize, n: usize, src: &str, dst: &str) -> Self {
        CoopLoadSpec { w, n, src: src.into(), dst: dst.into() }
    }
}

/// One statement per `⌈W/N⌉` load round; only rounds that can overrun
/// `W` are guarded.
pub fn gen_coop_load(spec: &CoopLoadSpec) -> Vec<String> {
    gen_coop_load_with(spec.w, spec.n, |off, ix| format!("{}[{off}+thread_id] = {}[{ix}];", spec.dst, spec.src))
}

/// Like [`gen_coop_load`] with a caller-built statement per round. `stmt`
/// gets the round's word offset and its index text (`thread_id` for the
/// first round, `<off>+thread_id` after).
pub fn gen_coop_load_with(w: usize, n: usize, stmt: impl Fn(usize, &str) -> String) -> Vec<String> {
    assert!(w >= 1 && n >= 1, "cooperative load of {w} words over {n} threads");
    let rounds = (w - 1) / n + 1;
    (0..rounds)
        .map(|i| {
            let off = i * n;
            let ix = if i == 0 { "thread_id".to_string() } else { format!("{off}+thread_id") };
            let body = stmt(off, &ix);
            if off + (n - 1) >= w {
                format!("if({ix}<{w}){{{body}}}")
            } else {
                body
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_expansion() {
        let s = gen_coop_load(&CoopLoadSpec::new(256, 96, "filts", "filts_buf"));
        assert_eq!(
            s,
            vec![
                "filts_buf[0+thread_id] = filts[thread_id];",
                "filts_buf[96+thread_id] = filts[96+thread_id];",
                "if(192+thread_id<256){filts_buf[192+thread_id] = filts[192+thread_id];}",
            ]
        );
    }

    #[test]
    fn exact_multiples_and_small_cases() {
        let s = gen_coop_load(&CoopLoadSpec::new(256, 64, "a", "b"));
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|l| !l.starts_with("if")));
        assert_eq!(gen_coop_load(&CoopLoadSpec::new(7, 7, "a", "b")), vec!["b[0+thread_id] = a[thread_id];"]);
        assert_eq!(gen_coop_load(&CoopLoadSpec::new(70, 100, "a", "b")), vec!["if(thread_id<70){b[0+thread_id] = a[thread_id];}"]);
    }

    /// Evaluates the emitted statements textually for one thread.
    fn offsets_written(stmts: &[String], tid: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for s in stmts {
            let (guard, body) = match s.strip_prefix("if(") {
                Some(rest) => {
                    let (g, b) = rest.split_once("){").unwrap();
                    (Some(g), b)
                }
                None => (None, s.as_str()),
            };
            let dst = body.split_once('[').unwrap().1.split_once(']').unwrap().0;
            let off: usize = dst.split_once('+').unwrap().0.parse().unwrap();
            if let Some(g) = guard {
                let bound: usize = g.rsplit_once('<').unwrap().1.parse().unwrap();
                if off + tid >= bound {
                    continue;
                }
            }
            out.push(off + tid);
        }
        out
    }

    #[test]
    fn covers_every_word_once() {
        for w in 1..=32 {
            for n in 1..=32 {
                let stmts = gen_coop_load(&CoopLoadSpec::new(w, n, "s", "d"));
                assert_eq!(stmts.len(), w.div_ceil(n));
                let mut seen = vec![0u32; w];
                for tid in 0..n {
                    let mine = offsets_written(&stmts, tid);
                    // same words as the reference loop
                    let reference: Vec<usize> = (0..w.div_ceil(n)).map(|i| i * n + tid).filter(|&ix| ix < w).collect();
                    assert_eq!(mine, reference, "W={w} N={n} tid={tid}");
                    for o in mine {
                        seen[o] += 1;
                    }
                }
                assert!(seen.iter().all(|&c| c == 1), "W={w} N={n}");
            }
        }
    }
}
