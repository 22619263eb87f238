//! Five-way byte classification, display colors, and class-frequency histograms.
//!
//! Every byte value belongs to exactly one of five classes (null, printable,
//! control, extended, 0xFF); rendered images additionally use a `Padding`
//! sentinel for grid cells past the end of the data.

use thiserror::Error;

/// Classification of a single byte value. `Padding` is never produced by
/// [`classify_byte`]; it only marks unused cells in a rendered image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ByteClass {
    Null,
    Printable,
    Control,
    Extended,
    Full,
    Padding,
}

impl ByteClass {
    /// Channel/column index. Order: Null, Printable, Control, Extended, Full, Padding.
    pub fn index(self) -> usize {
        match self {
            ByteClass::Null => 0,
            ByteClass::Printable => 1,
            ByteClass::Control => 2,
            ByteClass::Extended => 3,
            ByteClass::Full => 4,
            ByteClass::Padding => 5,
        }
    }

    /// The five data classes in index order (excludes `Padding`).
    pub const DATA_CLASSES: [ByteClass; 5] = [
        ByteClass::Null,
        ByteClass::Printable,
        ByteClass::Control,
        ByteClass::Extended,
        ByteClass::Full,
    ];
}

/// Map a byte value to its class.
///
/// 0x00 is null, 0xFF is full, 0x20..=0x7E printable, 0x01..=0x1F and 0x7F
/// control, 0x80..=0xFE extended.
pub fn classify_byte(value: u8) -> ByteClass {
    match value {
        0x00 => ByteClass::Null,
        0x01..=0x1F | 0x7F => ByteClass::Control,
        0x20..=0x7E => ByteClass::Printable,
        0x80..=0xFE => ByteClass::Extended,
        0xFF => ByteClass::Full,
    }
}

/// Display color of a class as an RGB triple.
pub fn class_color(class: ByteClass) -> (u8, u8, u8) {
    match class {
        ByteClass::Null => (0, 0, 0),
        ByteClass::Printable => (0, 0, 255),
        ByteClass::Control => (0, 255, 0),
        ByteClass::Extended => (255, 0, 0),
        ByteClass::Full => (255, 255, 255),
        ByteClass::Padding => (128, 128, 128),
    }
}

/// Per-class byte counts over a non-empty byte sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHistogram {
    /// Counts indexed by [`ByteClass::index`] (padding excluded).
    pub counts: [u64; 5],
    pub total: u64,
}

impl FeatureHistogram {
    /// Fractions counts[i]/total, in class index order.
    pub fn frequencies(&self) -> [f64; 5] {
        let t = self.total as f64;
        self.counts.map(|c| c as f64 / t)
    }

    pub fn count(&self, class: ByteClass) -> u64 {
        self.counts[class.index()]
    }

    pub fn frequency(&self, class: ByteClass) -> f64 {
        self.count(class) as f64 / self.total as f64
    }

    /// CSV row `null,printable,control,extended,full,total`.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.counts[0], self.counts[1], self.counts[2], self.counts[3], self.counts[4], self.total
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistogramError {
    #[error("cannot build a histogram from an empty byte sequence")]
    EmptyInput,
}

/// Count the byte classes in a sequence.
pub fn histogram(bytes: &[u8]) -> Result<FeatureHistogram, HistogramError> {
    if bytes.is_empty() {
        return Err(HistogramError::EmptyInput);
    }
    let mut counts = [0u64; 5];
    for &b in bytes {
        counts[classify_byte(b).index()] += 1;
    }
    Ok(FeatureHistogram {
        counts,
        total: bytes.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classify_boundaries() {
        assert_eq!(classify_byte(0x00), ByteClass::Null);
        assert_eq!(classify_byte(0x01), ByteClass::Control);
        assert_eq!(classify_byte(0x07), ByteClass::Control);
        assert_eq!(classify_byte(0x1F), ByteClass::Control);
        assert_eq!(classify_byte(0x20), ByteClass::Printable);
        assert_eq!(classify_byte(0x41), ByteClass::Printable);
        assert_eq!(classify_byte(0x7E), ByteClass::Printable);
        assert_eq!(classify_byte(0x7F), ByteClass::Control);
        assert_eq!(classify_byte(0x80), ByteClass::Extended);
        assert_eq!(classify_byte(0xFE), ByteClass::Extended);
        assert_eq!(classify_byte(0xFF), ByteClass::Full);
    }

    #[test]
    fn classify_is_total_partition() {
        let mut per_class = [0u32; 5];
        for v in 0u16..=255 {
            let class = classify_byte(v as u8);
            assert_ne!(class, ByteClass::Padding);
            per_class[class.index()] += 1;
        }
        // 1 null + 95 printable + 32 control + 127 extended + 1 full = 256
        assert_eq!(per_class, [1, 95, 32, 127, 1]);
        assert_eq!(per_class.iter().sum::<u32>(), 256);
    }

    #[test]
    fn colors_pairwise_distinct() {
        let all = [
            ByteClass::Null,
            ByteClass::Printable,
            ByteClass::Control,
            ByteClass::Extended,
            ByteClass::Full,
            ByteClass::Padding,
        ];
        for (i, &a) in all.iter().enumerate() {
            for &b in &all[i + 1..] {
                assert_ne!(class_color(a), class_color(b), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn color_assignments() {
        assert_eq!(class_color(ByteClass::Null), (0, 0, 0));
        assert_eq!(class_color(ByteClass::Full), (255, 255, 255));
        assert_eq!(class_color(ByteClass::Printable), (0, 0, 255));
        assert_eq!(class_color(ByteClass::Control), (0, 255, 0));
        assert_eq!(class_color(ByteClass::Extended), (255, 0, 0));
        assert_eq!(class_color(ByteClass::Padding), (128, 128, 128));
    }

    #[test]
    fn histogram_single_class() {
        let h = histogram(&[0x00; 100]).unwrap();
        assert_eq!(h.counts, [100, 0, 0, 0, 0]);
        assert_eq!(h.total, 100);
        assert_eq!(h.frequencies(), [1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn histogram_mixed() {
        let h = histogram(b"AB\x00\xFF").unwrap();
        assert_eq!(h.count(ByteClass::Printable), 2);
        assert_eq!(h.count(ByteClass::Null), 1);
        assert_eq!(h.count(ByteClass::Full), 1);
        assert_eq!(h.total, 4);
        assert_eq!(h.to_csv_row(), "1,2,0,0,1,4");
    }

    #[test]
    fn histogram_empty_is_error() {
        assert_eq!(histogram(&[]), Err(HistogramError::EmptyInput));
    }

    proptest! {
        #[test]
        fn histogram_additive(a in proptest::collection::vec(any::<u8>(), 1..200),
                              b in proptest::collection::vec(any::<u8>(), 1..200)) {
            let ha = histogram(&a).unwrap();
            let hb = histogram(&b).unwrap();
            let mut joined = a.clone();
            joined.extend_from_slice(&b);
            let hj = histogram(&joined).unwrap();
            for i in 0..5 {
                prop_assert_eq!(hj.counts[i], ha.counts[i] + hb.counts[i]);
            }
            prop_assert_eq!(hj.total, ha.total + hb.total);
        }

        #[test]
        fn frequencies_sum_to_one(bytes in proptest::collection::vec(any::<u8>(), 1..500)) {
            let h = histogram(&bytes).unwrap();
            let sum: f64 = h.frequencies().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
