//! MSB-first bit writer with Exp-Golomb codes.

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u8,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit(&mut self, b: bool) {
        self.acc = (self.acc << 1) | b as u8;
        self.nbits += 1;
        if self.nbits == 8 {
            self.bytes.push(self.acc);
            self.acc = 0;
            self.nbits = 0;
        }
    }

    pub fn u(&mut self, n: u32, v: u32) {
        for i in (0..n).rev() {
            self.bit((v >> i) & 1 == 1);
        }
    }

    pub fn ue(&mut self, v: u32) {
        let x = v as u64 + 1;
        let len = 64 - x.leading_zeros();
        for _ in 0..len - 1 {
            self.bit(false);
        }
        for i in (0..len).rev() {
            self.bit((x >> i) & 1 == 1);
        }
    }

    pub fn se(&mut self, v: i32) {
        let mapped = if v > 0 { 2 * v as u32 - 1 } else { (-2 * v) as u32 };
        self.ue(mapped);
    }

    pub fn align_zero(&mut self) {
        while self.nbits != 0 {
            self.bit(false);
        }
    }

    /// rbsp_trailing_bits: a stop bit, then zero alignment.
    pub fn trailing(&mut self) {
        self.bit(true);
        self.align_zero();
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.align_zero();
        self.bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_golomb() {
        let mut w = BitWriter::new();
        w.ue(0); // 1
        w.ue(1); // 010
        w.ue(2); // 011
        w.ue(3); // 00100
        w.se(-1); // ue(2) = 011
        w.trailing();
        assert_eq!(w.finish(), vec![0b1010_0110, 0b0100_0111]);
    }
}
