//! Mono 16-bit PCM WAV export at the audio rate.

use std::io::Write;

use bowsim_core::fdm::AUDIO_RATE;
use bowsim_core::Error;

/// Peak level of the normalized signal, −1 dBFS.
pub const PEAK_DBFS: f64 = -1.0;

/// Integer decimation factor from `rate` to the audio rate.
pub fn decimation_factor(rate: f64) -> Result<usize, Error> {
    let k = rate / AUDIO_RATE;
    let r = k.round();
    if r < 1.0 || (k - r).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::Export(format!("{rate} Hz is not an integer multiple of {AUDIO_RATE} Hz")));
    }
    Ok(r as usize)
}

/// Block averages over `factor` samples; a short final block is averaged
/// over what it holds.
pub fn decimate(x: &[f64], factor: usize) -> Vec<f64> {
    if factor <= 1 {
        return x.to_vec();
    }
    x.chunks(factor).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Scales to a −1 dBFS peak and quantizes. An all-zero signal stays silent.
pub fn to_pcm16(x: &[f64]) -> Vec<i16> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 10f64.powf(PEAK_DBFS / 20.0) / peak } else { 0.0 };
    x.iter().map(|v| (v * gain * 32767.0).round().clamp(-32768.0, 32767.0) as i16).collect()
}

pub fn write_wav<W: Write>(mut w: W, samples: &[i16], sample_rate: u32) -> std::io::Result<()> {
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * 2).to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    let mut bytes = Vec::with_capacity(samples.len() * 2);
    for s in samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    w.write_all(&bytes)
}

/// Renders a `p` series sampled at `rate` to WAV bytes at 44.1 kHz.
pub fn render(p: &[f64], rate: f64) -> Result<Vec<u8>, Error> {
    let k = decimation_factor(rate)?;
    let pcm = to_pcm16(&decimate(p, k));
    let mut out = Vec::with_capacity(44 + 2 * pcm.len());
    write_wav(&mut out, &pcm, AUDIO_RATE as u32)?;
    Ok(out)
}

/// Samples of a WAV produced by [`write_wav`].
pub fn read_pcm16(bytes: &[u8]) -> Option<(u32, Vec<i16>)> {
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" || &bytes[36..40] != b"data" {
        return None;
    }
    let rate = u32::from_le_bytes(bytes[24..28].try_into().ok()?);
    let n = u32::from_le_bytes(bytes[40..44].try_into().ok()?) as usize;
    let data = bytes.get(44..44 + n)?;
    Some((rate, data.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_is_silent_with_correct_length() {
        let bytes = render(&vec![0.0; 4411], AUDIO_RATE).unwrap();
        let (rate, pcm) = read_pcm16(&bytes).unwrap();
        assert_eq!(rate, 44_100);
        assert_eq!(pcm.len(), 4411);
        assert!(pcm.iter().all(|&s| s == 0));
    }

    #[test]
    fn reference_rate_decimates_by_one_hundred() {
        assert_eq!(decimation_factor(4_410_000.0).unwrap(), 100);
        assert_eq!(decimation_factor(44_100.0).unwrap(), 1);
        assert!(matches!(decimation_factor(48_000.0), Err(Error::Export(_))));
        assert!(matches!(decimation_factor(22_050.0), Err(Error::Export(_))));
    }

    #[test]
    fn block_average() {
        assert_eq!(decimate(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0, 9.0]);
    }

    #[test]
    fn peak_is_minus_one_dbfs() {
        let x: Vec<f64> = (0..1000).map(|i| 0.3 * (0.01 * i as f64).sin()).collect();
        let pcm = to_pcm16(&x);
        let peak = pcm.iter().map(|s| s.unsigned_abs()).max().unwrap() as f64 / 32767.0;
        assert!((20.0 * peak.log10() + 1.0).abs() < 1e-3);
    }
}
