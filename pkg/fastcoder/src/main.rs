//! Framed stdio server for out-of-process use.
//!
//! Frames are u32-LE length-prefixed.  One job = two request frames:
//!   frame A: op byte (0x45 encode / 0x44 decode) + K u16-LE frequencies
//!   frame B: encode -> n u16-LE symbols
//!            decode -> u32-LE symbol count + payload bytes
//! answered by one response frame: 0x00 + result (payload bytes for
//! encode, u16-LE symbols for decode) or 0x01 + utf-8 error message.
//! The process loops until EOF at a frame boundary.
//!
//! `fastcoder-stdio bench [symbols]` instead runs the built-in throughput
//! benchmark and exits.

use std::io::{self, Read, Write};

use fastcoder::{decode, encode};

const OP_ENCODE: u8 = 0x45;
const OP_DECODE: u8 = 0x44;

fn read_frame(input: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    match input.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(header) as usize;
    let mut body = vec![0u8; len];
    input.read_exact(&mut body)?;
    Ok(Some(body))
}

fn write_frame(output: &mut impl Write, body: &[u8]) -> io::Result<()> {
    output.write_all(&(body.len() as u32).to_le_bytes())?;
    output.write_all(body)?;
    output.flush()
}

fn u16_vec_le(bytes: &[u8]) -> Option<Vec<u16>> {
    if bytes.len() % 2 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
}

fn handle_job(request: &[u8], data: &[u8]) -> Result<Vec<u8>, String> {
    let (&op, freq_bytes) = request.split_first().ok_or("empty request frame")?;
    let freqs = u16_vec_le(freq_bytes).ok_or("odd-length frequency block")?;
    match op {
        OP_ENCODE => {
            let symbols = u16_vec_le(data).ok_or("odd-length symbol block")?;
            encode(&symbols, &freqs).map_err(|e| e.to_string())
        }
        OP_DECODE => {
            if data.len() < 4 {
                return Err("decode frame too short for the symbol count".into());
            }
            let n = u32::from_le_bytes([data[0], data[1], data[2], data[3]]) as usize;
            let symbols = decode(&data[4..], n, &freqs).map_err(|e| e.to_string())?;
            let mut out = Vec::with_capacity(2 * symbols.len());
            for s in symbols {
                out.extend_from_slice(&s.to_le_bytes());
            }
            Ok(out)
        }
        other => Err(format!("unknown op byte 0x{other:02x}")),
    }
}

fn serve() -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut input = stdin.lock();
    let mut output = stdout.lock();
    loop {
        let request = match read_frame(&mut input)? {
            Some(frame) => frame,
            None => return Ok(()),
        };
        let data = match read_frame(&mut input)? {
            Some(frame) => frame,
            None => {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof,
                                          "job truncated after first frame"))
            }
        };
        let mut response = Vec::new();
        match handle_job(&request, &data) {
            Ok(result) => {
                response.push(0x00);
                response.extend_from_slice(&result);
            }
            Err(message) => {
                response.push(0x01);
                response.extend_from_slice(message.as_bytes());
            }
        }
        write_frame(&mut output, &response)?;
    }
}

fn bench(num_symbols: usize) {
    // Deterministic zipf-flavored table and symbol stream (splitmix64).
    let mut state: u64 = 0x9E3779B97F4A7C15;
    let mut next = move || {
        state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    };
    let k = 1024usize;
    let mut freqs = vec![1u16; k];
    let mut remaining = 65536u32 - k as u32;
    let mut i = 0usize;
    while remaining > 0 {
        let add = ((remaining / 2).max(1)).min(u32::from(u16::MAX - freqs[i % k]));
        freqs[i % k] += add as u16;
        remaining -= add;
        i += 1;
    }
    let mut cum = vec![0u32; k + 1];
    for (j, &f) in freqs.iter().enumerate() {
        cum[j + 1] = cum[j] + u32::from(f);
    }
    let symbols: Vec<u16> = (0..num_symbols)
        .map(|_| {
            let v = (next() % 65536) as u32;
            (cum.partition_point(|&c| c <= v) - 1) as u16
        })
        .collect();

    let start = std::time::Instant::now();
    let payload = encode(&symbols, &freqs).expect("encode");
    let enc_s = start.elapsed().as_secs_f64();
    let start = std::time::Instant::now();
    let decoded = decode(&payload, symbols.len(), &freqs).expect("decode");
    let dec_s = start.elapsed().as_secs_f64();
    assert_eq!(decoded, symbols);
    println!(
        "{num_symbols} symbols: encode {enc_s:.4}s ({:.1} Msym/s), \
         decode {dec_s:.4}s ({:.1} Msym/s), payload {} bytes",
        num_symbols as f64 / enc_s / 1e6,
        num_symbols as f64 / dec_s / 1e6,
        payload.len()
    );
}

fn main() -> io::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() > 1 && args[1] == "bench" {
        let n = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1_000_000);
        bench(n);
        return Ok(());
    }
    serve()
}
