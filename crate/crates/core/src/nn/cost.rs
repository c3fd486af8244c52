//! Analytic multiply-accumulate counts, used as a latency proxy.

use super::model::Arch;

/// MACs per layer in execution order: conv1, conv2, aux, conv3, fc1, fc2.
pub fn layer_macs(arch: &Arch) -> [u64; 6] {
    let k2 = (arch.kernel * arch.kernel) as u64;
    let [c1, c2, c3] = arch.widths.map(|c| c as u64);
    let conv = |h: usize, w: usize, ci: u64, co: u64| (h * w) as u64 * k2 * ci * co;
    let (h, w) = (arch.in_h, arch.in_w);
    [
        conv(h, w, arch.in_c as u64, c1),
        conv(h / 2, w / 2, c1, c2),
        c2,
        conv(h / 4, w / 4, c2, c3),
        c3 * arch.hidden as u64,
        arch.hidden as u64,
    ]
}

/// MACs actually executed for one sample. An exited sample runs blocks 1-2
/// and the auxiliary head; a non-exited one runs everything.
pub fn count_macs(arch: &Arch, exited: bool) -> u64 {
    let l = layer_macs(arch);
    if exited {
        l[0] + l[1] + l[2]
    } else {
        l.iter().sum()
    }
}

/// `r * MACs_exit + (1 - r) * MACs_full`.
pub fn expected_macs(arch: &Arch, exit_rate: f64) -> f64 {
    exit_rate * count_macs(arch, true) as f64 + (1.0 - exit_rate) * count_macs(arch, false) as f64
}

/// Expected MACs relative to running the full model on every sample.
pub fn mac_ratio(arch: &Arch, exit_rate: f64) -> f64 {
    expected_macs(arch, exit_rate) / count_macs(arch, false) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_layer_counts() {
        let a = Arch::default();
        // 32*60*9*9*16, 16*30*9*16*32, 32, 8*15*9*32*64, 64*32, 32
        assert_eq!(
            layer_macs(&a),
            [2_488_320, 2_211_840, 32, 2_211_840, 2048, 32]
        );
        assert_eq!(count_macs(&a, true), 4_700_192);
        assert_eq!(count_macs(&a, false), 6_914_112);
    }

    #[test]
    fn exit_prefix_is_strictly_cheaper() {
        let a = Arch::default();
        assert!(count_macs(&a, true) < count_macs(&a, false));
        assert_eq!(mac_ratio(&a, 0.0), 1.0);
        assert!(mac_ratio(&a, 0.3) < 1.0);
    }

    #[test]
    fn mixture_identity() {
        let a = Arch::default();
        let r = 0.37;
        let direct = r * 4_700_192.0 + (1.0 - r) * 6_914_112.0;
        assert_eq!(expected_macs(&a, r), direct);
    }
}
