/// Number of active chunks after observing `L_ODE1` on the current active
/// set: one more chunk once the loss falls below `η_cau`, never skipping and
/// never exceeding `m_cau`.
pub fn causal_schedule(l_ode1_active: f64, active: usize, m_cau: usize, eta_cau: f64) -> usize {
    if active < m_cau && l_ode1_active < eta_cau {
        active + 1
    } else {
        active
    }
}

/// Chunk index of time `t` in a window `[t_start, t_start + length]` cut into
/// `m_cau` equal chunks.
pub fn chunk_of(t: f64, t_start: f64, length: f64, m_cau: usize) -> usize {
    let x = ((t - t_start) / length * m_cau as f64).floor();
    (x.max(0.0) as usize).min(m_cau - 1)
}
