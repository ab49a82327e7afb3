//! CRC32 (IEEE 802.3 polynomial, the zlib/PNG variant).

const POLY: u32 = 0xEDB8_8320;

fn table() -> [u32; 256] {
    let mut t = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { POLY ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        t[i] = c;
        i += 1;
    }
    t
}

static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();

/// Checksum of `data`.
pub fn crc32(data: &[u8]) -> u32 {
    let table = TABLE.get_or_init(table);
    let mut c = 0xFFFF_FFFFu32;
    for &byte in data {
        c = table[((c ^ byte as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}
