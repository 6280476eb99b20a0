//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

/// Independent BLEU: string-keyed n-gram maps and a direct product.
pub fn oracle_self_bleu(docs: &[Vec<String>]) -> f64 {
    fn grams(t: &[String], n: usize) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        if t.len() >= n {
            for i in 0..=t.len() - n {
                *m.entry(t[i..i + n].join("\u{1}")).or_insert(0) += 1;
            }
        }
        m
    }
    let mut total = 0.0;
    for (i, cand) in docs.iter().enumerate() {
        let refs: Vec<&Vec<String>> = docs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| d).collect();
        let mut product = 1.0;
        for n in 1..=3 {
            let c = grams(cand, n);
            let denom: usize = c.values().sum();
            let mut num = 0usize;
            for (g, count) in &c {
                let max_ref = refs.iter().map(|r| grams(r, n).get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                num += (*count).min(max_ref);
            }
            let p = if denom == 0 { 0.0 } else { num as f64 / denom as f64 };
            product *= p;
        }
        let geo = if product == 0.0 { 0.0 } else { product.powf(1.0 / 3.0) };
        let c_len = cand.len() as i64;
        let r_len = refs
            .iter()
            .map(|r| r.len() as i64)
            .min_by_key(|&l| ((l - c_len).abs(), l))
            .unwrap();
        let bp = if c_len == 0 {
            0.0
        } else if c_len > r_len {
            1.0
        } else {
            (1.0 - r_len as f64 / c_len as f64).exp()
        };
        total += bp * geo;
    }
    total / docs.len() as f64
}

pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
