use std::ops::Range;

/// Token order: start token `S`, `K_ctx` previous-window slots, then the scale blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowLayout {
    pub window: usize,
    pub scales: Vec<usize>,
    pub k_ctx: usize,
    times: Vec<f64>,
    groups: Vec<usize>,
    offsets: Vec<usize>,
}

impl WindowLayout {
    pub fn new(window: usize, scales: &[usize], k_ctx: usize) -> Self {
        let w = window as f64;
        let mut times = vec![0.0];
        let mut groups = vec![0];
        for j in 0..k_ctx {
            times.push((j as f64 + 0.5) * w / k_ctx as f64 - w);
            groups.push(0);
        }
        let mut offsets = Vec::with_capacity(scales.len() + 1);
        for (i, &l) in scales.iter().enumerate() {
            offsets.push(times.len());
            for j in 0..l {
                times.push((j as f64 + 0.5) * w / l as f64);
                groups.push(i + 1);
            }
        }
        offsets.push(times.len());
        WindowLayout {
            window,
            scales: scales.to_vec(),
            k_ctx,
            times,
            groups,
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn prefix_len(&self) -> usize {
        1 + self.k_ctx
    }

    /// Start slot plus all scale tokens of the current window.
    pub fn current_slots(&self) -> usize {
        1 + self.scales.iter().sum::<usize>()
    }

    pub fn code_tokens(&self) -> usize {
        self.len() - self.prefix_len()
    }

    /// Token positions in frame units relative to the window start.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `0` for the prefix, `i + 1` for scale block `i`.
    pub fn group(&self, token: usize) -> usize {
        self.groups[token]
    }

    pub fn block(&self, scale: usize) -> Range<usize> {
        self.offsets[scale]..self.offsets[scale + 1]
    }

    /// Row range of block `scale` inside the code-token logits.
    pub fn logit_rows(&self, scale: usize) -> Range<usize> {
        let r = self.block(scale);
        r.start - self.prefix_len()..r.end - self.prefix_len()
    }

    /// Row-major `[len, len]` allow-matrix: prefix tokens see the prefix, block
    /// tokens see the prefix, earlier blocks and their own block.
    pub fn block_causal_mask(&self) -> Vec<bool> {
        let n = self.len();
        let mut m = Vec::with_capacity(n * n);
        for q in 0..n {
            for k in 0..n {
                m.push(self.groups[k] <= self.groups[q]);
            }
        }
        m
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.groups[k] <= self.groups[q]
    }
}
