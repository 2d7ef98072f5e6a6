use std::net::Ipv4Addr;

use rand::seq::index;
use rand::Rng;

use crate::error::SplitError;
use crate::model::{Activity, ActivityType, ContextId, Endpoint, MessageId};

/// Random composition of `size` into `parts` positive integers.
pub fn composition<R: Rng + ?Sized>(size: u64, parts: usize, rng: &mut R) -> Result<Vec<u64>, SplitError> {
    if size == 0 || parts == 0 {
        return Err(SplitError::Empty);
    }
    if parts as u64 > size {
        return Err(SplitError::TooManyParts { size, parts });
    }
    let mut cuts: Vec<u64> = index::sample(rng, (size - 1) as usize, parts - 1)
        .into_iter()
        .map(|c| c as u64 + 1)
        .collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(size)) {
        out.push(c - prev);
        prev = c;
    }
    Ok(out)
}

/// Splits one message into independently chosen send-side and receive-side
/// segment sizes; both sum to `size`.
pub fn split_message<R: Rng + ?Sized>(
    size: u64,
    send_parts: usize,
    receive_parts: usize,
    rng: &mut R,
) -> Result<(Vec<u64>, Vec<u64>), SplitError> {
    Ok((composition(size, send_parts, rng)?, composition(size, receive_parts, rng)?))
}

/// Where shared-channel noise goes: the program, process and listening
/// endpoint of a real server.
#[derive(Debug, Clone)]
pub struct NoiseTarget {
    pub hostname: String,
    pub program: String,
    pub pid: u32,
    pub endpoint: Endpoint,
}

/// Where filterable noise goes.
#[derive(Debug, Clone)]
pub struct NoiseHost {
    pub hostname: String,
    pub ip: Ipv4Addr,
}

#[derive(Debug, Clone)]
pub struct NoiseSpec<'a> {
    pub count: usize,
    pub programs: &'a [String],
    pub shared_fraction: f64,
    pub hosts: &'a [NoiseHost],
    pub shared: Option<&'a NoiseTarget>,
    /// True-time span noise is spread over.
    pub span: (u64, u64),
}

const NOISE_THREADS: u32 = 8;
const NOISE_TID_BASE: u32 = 60_000;
const FILTERABLE_PORT: u16 = 22;

/// Exactly `spec.count` activities that belong to no request: short
/// RECEIVE/SEND exchanges with hosts outside the system, timestamped in
/// true time, each paired with the host that logs it.
pub fn inject_noise<R: Rng + ?Sized>(spec: &NoiseSpec<'_>, rng: &mut R) -> Vec<(String, Activity)> {
    let mut out = Vec::with_capacity(spec.count);
    let (lo, hi) = (spec.span.0, spec.span.1.max(spec.span.0 + 1));
    let mut remaining = spec.count;
    let mut n: u32 = 0;
    while remaining > 0 {
        n += 1;
        let shared = match spec.shared {
            Some(_) if spec.programs.is_empty() || spec.hosts.is_empty() => true,
            Some(_) => rng.gen_bool(spec.shared_fraction),
            None => false,
        };
        let outsider = Endpoint::new(
            Ipv4Addr::new(198, if shared { 19 } else { 18 }, (n >> 8) as u8, n as u8),
            1024 + (n % 60_000) as u16,
        );
        let (hostname, context, local) = if shared {
            let t = spec.shared.expect("checked");
            let tid = NOISE_TID_BASE + rng.gen_range(0..NOISE_THREADS);
            (t.hostname.clone(), ContextId::new(&t.hostname, &t.program, t.pid, tid), t.endpoint)
        } else {
            let h = &spec.hosts[rng.gen_range(0..spec.hosts.len())];
            let prog = &spec.programs[rng.gen_range(0..spec.programs.len())];
            let pid = 50_000 + n;
            (h.hostname.clone(), ContextId::new(&h.hostname, prog, pid, pid), Endpoint::new(h.ip, FILTERABLE_PORT))
        };
        let t = rng.gen_range(lo..hi);
        let size = rng.gen_range(16..512);
        out.push((
            hostname.clone(),
            Activity {
                kind: ActivityType::Receive,
                timestamp: t,
                context: context.clone(),
                message: MessageId { sender: outsider, receiver: local, size },
                seq: 0,
            },
        ));
        remaining -= 1;
        if remaining > 0 {
            out.push((
                hostname,
                Activity {
                    kind: ActivityType::Send,
                    timestamp: t + rng.gen_range(1_000..50_000),
                    context,
                    message: MessageId { sender: local, receiver: outsider, size: rng.gen_range(16..2048) },
                    seq: 0,
                },
            ));
            remaining -= 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn composition_sums_and_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for parts in 1..=5 {
            let c = composition(10, parts, &mut rng).unwrap();
            assert_eq!(c.len(), parts);
            assert_eq!(c.iter().sum::<u64>(), 10);
            assert!(c.iter().all(|&p| p > 0));
        }
        assert_eq!(composition(3, 3, &mut rng).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn composition_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(composition(2, 3, &mut rng), Err(SplitError::TooManyParts { size: 2, parts: 3 }));
        assert_eq!(composition(0, 1, &mut rng), Err(SplitError::Empty));
        assert_eq!(composition(5, 0, &mut rng), Err(SplitError::Empty));
    }

    #[test]
    fn noise_count_is_exact_and_external() {
        let hosts = vec![NoiseHost { hostname: "web".into(), ip: Ipv4Addr::new(10, 0, 0, 1) }];
        let progs = vec!["sshd".to_string()];
        let target = NoiseTarget {
            hostname: "db".into(),
            program: "mysqld".into(),
            pid: 3000,
            endpoint: Endpoint::new(Ipv4Addr::new(10, 0, 0, 3), 3306),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for count in [0, 1, 7, 40] {
            let spec = NoiseSpec {
                count,
                programs: &progs,
                shared_fraction: 0.5,
                hosts: &hosts,
                shared: Some(&target),
                span: (100, 200),
            };
            let noise = inject_noise(&spec, &mut rng);
            assert_eq!(noise.len(), count);
            for (_, a) in &noise {
                let remote = if a.kind == ActivityType::Receive { a.message.sender } else { a.message.receiver };
                assert_eq!(remote.ip.octets()[0], 198);
            }
        }
    }
}
