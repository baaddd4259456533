//! Named-dimension N-D arrays.
//!
//! Every dimension carries a mnemonic name, a size and a stride (in
//! elements). Kernel templates declare the names they expect; callers are
//! checked against those names before any code is specialized on sizes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NdaError {
    #[error("dimension list is empty")]
    EmptyDims,
    #[error("duplicate dimension name `{0}`")]
    DuplicateDimName(String),
    #[error("invalid dimension name `{0}`")]
    InvalidDimName(String),
    #[error("dimension `{0}` has zero size")]
    ZeroSize(String),
    #[error("{names} names but {sizes} sizes")]
    LengthMismatch { names: usize, sizes: usize },
    #[error("index {index} out of bounds for dimension `{dim}` of size {size}")]
    IndexOutOfBounds { dim: String, index: usize, size: usize },
    #[error("index has {got} components, array has {want} dimensions")]
    IndexArity { want: usize, got: usize },
    #[error("name sets differ: {src} vs {target}")]
    NameSetMismatch { src: String, target: String },
    #[error("target shrinks dimension `{dim}` from {src} to {target}")]
    Shrink { dim: String, src: usize, target: usize },
    #[error("buffer holds {got} elements, dims need {want}")]
    BufferLength { want: usize, got: usize },
}

/// Returns true if `name` matches `[a-z_][a-z0-9_]*`.
pub fn is_dim_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DimInfo {
    pub name: String,
    pub size: usize,
    pub stride: usize,
}

/// Ordered list of named dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DimsSpec {
    dims: Vec<DimInfo>,
}

impl DimsSpec {
    /// Dense row-major dims from `(name, size)` pairs.
    pub fn new<S: AsRef<str>>(names: &[S], sizes: &[usize]) -> Result<Self, NdaError> {
        if names.len() != sizes.len() {
            return Err(NdaError::LengthMismatch { names: names.len(), sizes: sizes.len() });
        }
        if names.is_empty() {
            return Err(NdaError::EmptyDims);
        }
        let mut seen = BTreeSet::new();
        for (n, &s) in names.iter().zip(sizes) {
            let n = n.as_ref();
            if !is_dim_name(n) {
                return Err(NdaError::InvalidDimName(n.to_string()));
            }
            if !seen.insert(n) {
                return Err(NdaError::DuplicateDimName(n.to_string()));
            }
            if s == 0 {
                return Err(NdaError::ZeroSize(n.to_string()));
            }
        }
        let mut dims: Vec<DimInfo> = names
            .iter()
            .zip(sizes)
            .map(|(n, &size)| DimInfo { name: n.as_ref().to_string(), size, stride: 0 })
            .collect();
        let mut stride = 1;
        for d in dims.iter_mut().rev() {
            d.stride = stride;
            stride *= d.size;
        }
        Ok(DimsSpec { dims })
    }

    /// Parses the compact `name:size,name:size` form, e.g. `img:5,chan:3`.
    pub fn parse(text: &str) -> Result<Self, NdaError> {
        let mut names = Vec::new();
        let mut sizes = Vec::new();
        for part in text.split(',').filter(|p| !p.trim().is_empty()) {
            let (n, s) = part.split_once(':').ok_or_else(|| NdaError::InvalidDimName(part.to_string()))?;
            names.push(n.trim().to_string());
            sizes.push(s.trim().parse().map_err(|_| NdaError::InvalidDimName(part.to_string()))?);
        }
        DimsSpec::new(&names, &sizes)
    }

    pub fn dims(&self) -> &[DimInfo] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&DimInfo> {
        self.dims.iter().find(|d| d.name == name)
    }

    pub fn size_of(&self, name: &str) -> Option<usize> {
        self.get(name).map(|d| d.size)
    }

    /// Product of sizes.
    pub fn elem_count(&self) -> usize {
        self.dims.iter().map(|d| d.size).product()
    }

    /// Buffer length needed to hold every addressable element.
    pub fn span(&self) -> usize {
        1 + self.dims.iter().map(|d| (d.size - 1) * d.stride).sum::<usize>()
    }

    pub fn is_dense(&self) -> bool {
        let mut stride = 1;
        for d in self.dims.iter().rev() {
            if d.stride != stride {
                return false;
            }
            stride *= d.size;
        }
        true
    }

    /// Copy of `self` with the same names and sizes but dense strides.
    pub fn densified(&self) -> DimsSpec {
        let names: Vec<&str> = self.names().collect();
        let sizes: Vec<usize> = self.dims.iter().map(|d| d.size).collect();
        DimsSpec::new(&names, &sizes).expect("existing dims are valid")
    }

    /// `img:5:154587,chan:3:51529` style listing, used in messages.
    pub fn names_joined(&self) -> String {
        self.names().collect::<Vec<_>>().join(":")
    }
}

impl fmt::Display for DimsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| format!("{}:{}", d.name, d.size)).collect();
        f.write_str(&parts.join(","))
    }
}

/// Offset of `idx` in an array laid out per `dims`.
pub fn index_flatten(dims: &DimsSpec, idx: &[usize]) -> Result<usize, NdaError> {
    if idx.len() != dims.len() {
        return Err(NdaError::IndexArity { want: dims.len(), got: idx.len() });
    }
    let mut off = 0;
    for (d, &i) in dims.dims.iter().zip(idx) {
        if i >= d.size {
            return Err(NdaError::IndexOutOfBounds { dim: d.name.clone(), index: i, size: d.size });
        }
        off += i * d.stride;
    }
    Ok(off)
}

/// Why two dimension declarations disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DimsMismatch {
    Arity { declared: usize, actual: usize },
    Name { position: usize, declared: String, actual: String },
}

impl fmt::Display for DimsMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimsMismatch::Arity { declared, actual } => {
                write!(f, "expected {declared} dimensions, got {actual}")
            }
            DimsMismatch::Name { position, declared, actual } => {
                write!(f, "dimension {position}: expected `{declared}`, got `{actual}`")
            }
        }
    }
}

/// Names-only compatibility check. Sizes and strides are free.
pub fn dims_check<'a, D, A>(declared: D, actual: A) -> Result<(), DimsMismatch>
where
    D: IntoIterator<Item = &'a str>,
    A: IntoIterator<Item = &'a str>,
{
    let declared: Vec<&str> = declared.into_iter().collect();
    let actual: Vec<&str> = actual.into_iter().collect();
    if declared.len() != actual.len() {
        return Err(DimsMismatch::Arity { declared: declared.len(), actual: actual.len() });
    }
    for (position, (d, a)) in declared.iter().zip(&actual).enumerate() {
        if d != a {
            return Err(DimsMismatch::Name { position, declared: d.to_string(), actual: a.to_string() });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    dims: DimsSpec,
    elems: Vec<f32>,
}

impl NdArray {
    pub fn zeros(dims: DimsSpec) -> Self {
        let elems = vec![0.0; dims.span()];
        NdArray { dims, elems }
    }

    pub fn from_vec(dims: DimsSpec, elems: Vec<f32>) -> Result<Self, NdaError> {
        if elems.len() != dims.span() {
            return Err(NdaError::BufferLength { want: dims.span(), got: elems.len() });
        }
        Ok(NdArray { dims, elems })
    }

    pub fn dims(&self) -> &DimsSpec {
        &self.dims
    }

    pub fn elems(&self) -> &[f32] {
        &self.elems
    }

    pub fn elems_mut(&mut self) -> &mut [f32] {
        &mut self.elems
    }

    /// Backing storage; callers must keep its length unchanged.
    pub(crate) fn elems_mut_vec(&mut self) -> &mut Vec<f32> {
        &mut self.elems
    }

    pub fn into_elems(self) -> Vec<f32> {
        self.elems
    }

    pub fn get(&self, idx: &[usize]) -> Result<f32, NdaError> {
        Ok(self.elems[index_flatten(&self.dims, idx)?])
    }

    pub fn set(&mut self, idx: &[usize], v: f32) -> Result<(), NdaError> {
        let off = index_flatten(&self.dims, idx)?;
        self.elems[off] = v;
        Ok(())
    }

    /// Visits every logical index in row-major order of the dims.
    pub fn for_each_index(dims: &DimsSpec, mut f: impl FnMut(&[usize])) {
        let sizes: Vec<usize> = dims.dims().iter().map(|d| d.size).collect();
        let mut idx = vec![0usize; sizes.len()];
        loop {
            f(&idx);
            let mut k = sizes.len();
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < sizes[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

/// Dense row-major zero-filled array.
pub fn make_nda<S: AsRef<str>>(names: &[S], sizes: &[usize]) -> Result<NdArray, NdaError> {
    Ok(NdArray::zeros(DimsSpec::new(names, sizes)?))
}

/// Checks that `target` is a permutation of `src` names, sizes never shrink.
pub fn check_conversion(src: &DimsSpec, target: &DimsSpec) -> Result<(), NdaError> {
    let a: BTreeSet<&str> = src.names().collect();
    let b: BTreeSet<&str> = target.names().collect();
    if a != b || src.len() != target.len() {
        return Err(NdaError::NameSetMismatch { src: src.names_joined(), target: target.names_joined() });
    }
    for d in target.dims() {
        let s = src.size_of(&d.name).expect("same name set");
        if d.size < s {
            return Err(NdaError::Shrink { dim: d.name.clone(), src: s, target: d.size });
        }
    }
    Ok(())
}

/// Reorders and/or zero-pads `src` into the `target` layout.
pub fn convert_format(src: &NdArray, target: &DimsSpec) -> Result<NdArray, NdaError> {
    check_conversion(&src.dims, target)?;
    let src_pos: BTreeMap<&str, usize> = src.dims.names().enumerate().map(|(i, n)| (n, i)).collect();
    let perm: Vec<usize> = target.names().map(|n| src_pos[n]).collect();
    let src_sizes: Vec<usize> = src.dims.dims().iter().map(|d| d.size).collect();
    let mut out = NdArray::zeros(target.clone());
    let mut sidx = vec![0usize; src.dims.len()];
    NdArray::for_each_index(target, |tidx| {
        for (t, &p) in tidx.iter().zip(&perm) {
            sidx[p] = *t;
        }
        if sidx.iter().zip(&src_sizes).all(|(i, s)| i < s) {
            let v = src.elems[index_flatten(&src.dims, &sidx).expect("in range")];
            let off = index_flatten(target, tidx).expect("in range");
            out.elems[off] = v;
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn make_nda_batch_of_images() {
        let a = make_nda(&["img", "chan", "y", "x"], &[5, 3, 227, 227]).unwrap();
        assert_eq!(a.elems().len(), 772_935);
        assert_eq!(a.dims().get("img").unwrap().stride, 154_587);
        assert!(a.elems().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn make_nda_small_cases() {
        let a = make_nda(&["k"], &[1]).unwrap();
        assert_eq!(a.elems().len(), 1);
        assert_eq!(a.dims().dims()[0].stride, 1);
        let b = make_nda(&["y", "x"], &[2, 3]).unwrap();
        let strides: Vec<usize> = b.dims().dims().iter().map(|d| d.stride).collect();
        assert_eq!(strides, vec![3, 1]);
    }

    #[test]
    fn make_nda_errors() {
        assert_eq!(make_nda::<&str>(&[], &[]).unwrap_err(), NdaError::EmptyDims);
        assert_eq!(make_nda(&["y", "y"], &[2, 3]).unwrap_err(), NdaError::DuplicateDimName("y".into()));
        assert!(matches!(make_nda(&["Y"], &[2]), Err(NdaError::InvalidDimName(_))));
        assert!(matches!(make_nda(&["y"], &[0]), Err(NdaError::ZeroSize(_))));
    }

    #[test]
    fn flatten_examples() {
        let d = DimsSpec::new(&["y", "x"], &[2, 3]).unwrap();
        assert_eq!(index_flatten(&d, &[1, 2]).unwrap(), 5);
        assert_eq!(index_flatten(&d, &[0, 0]).unwrap(), 0);
        assert_eq!(
            index_flatten(&d, &[2, 0]).unwrap_err(),
            NdaError::IndexOutOfBounds { dim: "y".into(), index: 2, size: 2 }
        );
        let big = DimsSpec::new(&["img", "chan", "y", "x"], &[5, 3, 227, 227]).unwrap();
        assert_eq!(index_flatten(&big, &[4, 2, 226, 226]).unwrap(), 772_934);
    }

    #[test]
    fn flatten_is_bijective_on_dense_arrays() {
        // brute force: every index maps to a distinct offset and offsets fill 0..n
        for sizes in [vec![4usize, 4, 4, 4], vec![2, 3, 5, 7], vec![4096], vec![16, 256], vec![3, 1, 9]] {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("d{i}")).collect();
            let d = DimsSpec::new(&names, &sizes).unwrap();
            let n = d.elem_count();
            let mut hit = vec![false; n];
            NdArray::for_each_index(&d, |idx| {
                let off = index_flatten(&d, idx).unwrap();
                assert!(!hit[off]);
                hit[off] = true;
            });
            assert!(hit.iter().all(|&h| h));
        }
    }

    #[test]
    fn dims_check_examples() {
        let err = dims_check(["in_chan", "out_chan", "y", "x"], ["img", "chan", "y", "x"]).unwrap_err();
        assert_eq!(
            err,
            DimsMismatch::Name { position: 0, declared: "in_chan".into(), actual: "img".into() }
        );
        assert!(dims_check(["img", "chan", "y", "x"], ["img", "chan", "y", "x"]).is_ok());
        assert_eq!(
            dims_check(["a", "b"], ["a", "b", "c"]).unwrap_err(),
            DimsMismatch::Arity { declared: 2, actual: 3 }
        );
    }

    #[test]
    fn convert_transpose_and_pad() {
        let src = NdArray::from_vec(DimsSpec::parse("img:1,chan:2,y:1,x:1").unwrap(), vec![7.0, 9.0]).unwrap();
        let t = DimsSpec::parse("chan:2,img:1,y:1,x:1").unwrap();
        let out = convert_format(&src, &t).unwrap();
        assert_eq!(out.get(&[0, 0, 0, 0]).unwrap(), 7.0);
        assert_eq!(out.get(&[1, 0, 0, 0]).unwrap(), 9.0);

        let src = NdArray::from_vec(DimsSpec::parse("chan:3").unwrap(), vec![1.0, 2.0, 3.0]).unwrap();
        let out = convert_format(&src, &DimsSpec::parse("chan:4").unwrap()).unwrap();
        assert_eq!(out.elems(), &[1.0, 2.0, 3.0, 0.0]);

        let bad = convert_format(&src, &DimsSpec::parse("k:4").unwrap());
        assert!(matches!(bad, Err(NdaError::NameSetMismatch { .. })));
        let shrink = convert_format(&src, &DimsSpec::parse("chan:2").unwrap());
        assert!(matches!(shrink, Err(NdaError::Shrink { .. })));
    }

    fn arb_array() -> impl Strategy<Value = (Vec<usize>, Vec<f32>, Vec<usize>, Vec<usize>)> {
        prop::collection::vec(1usize..5, 1..5).prop_flat_map(|sizes| {
            let n: usize = sizes.iter().product();
            let rank = sizes.len();
            (
                Just(sizes),
                prop::collection::vec(-10.0f32..10.0, n),
                Just((0..rank).collect::<Vec<_>>()).prop_shuffle(),
                prop::collection::vec(0usize..3, rank),
            )
        })
    }

    proptest! {
        #[test]
        fn convert_round_trip((sizes, vals, perm, pad) in arb_array()) {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("d{i}")).collect();
            let src = NdArray::from_vec(DimsSpec::new(&names, &sizes).unwrap(), vals).unwrap();
            let tnames: Vec<&str> = perm.iter().map(|&p| names[p].as_str()).collect();
            let tsizes: Vec<usize> = perm.iter().map(|&p| sizes[p] + pad[p]).collect();
            let mid = convert_format(&src, &DimsSpec::new(&tnames, &tsizes).unwrap()).unwrap();
            // padded region is zero
            let nonzero_src = src.elems().iter().filter(|v| **v != 0.0).count();
            let nonzero_mid = mid.elems().iter().filter(|v| **v != 0.0).count();
            prop_assert_eq!(nonzero_src, nonzero_mid);
            // inverse permutation with padding cropped is the identity
            let mut back_dims = Vec::new();
            for n in &names {
                back_dims.push(n.as_str());
            }
            let cropped = crop_to(&mid, &DimsSpec::new(&back_dims, &sizes).unwrap());
            prop_assert_eq!(cropped.elems(), src.elems());
        }

        #[test]
        fn dims_check_reflexive_and_symmetric(a in prop::collection::vec("[a-c]", 1..4), b in prop::collection::vec("[a-c]", 1..4)) {
            prop_assert!(dims_check(a.iter().map(|s| s.as_str()), a.iter().map(|s| s.as_str())).is_ok());
            let ab = dims_check(a.iter().map(|s| s.as_str()), b.iter().map(|s| s.as_str())).is_ok();
            let ba = dims_check(b.iter().map(|s| s.as_str()), a.iter().map(|s| s.as_str())).is_ok();
            prop_assert_eq!(ab, ba);
        }
    }

    // test-side crop: reads each target index by name from the source
    fn crop_to(src: &NdArray, target: &DimsSpec) -> NdArray {
        let mut out = NdArray::zeros(target.clone());
        NdArray::for_each_index(target, |tidx| {
            let sidx: Vec<usize> = src
                .dims()
                .names()
                .map(|n| tidx[target.names().position(|m| m == n).unwrap()])
                .collect();
            out.set(tidx, src.get(&sidx).unwrap()).unwrap();
        });
        out
    }
}
