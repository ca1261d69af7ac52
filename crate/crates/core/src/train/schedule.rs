/// One candidate evaluation of the delay-count update.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayUpdate {
    pub epoch: usize,
    pub from: usize,
    pub to: usize,
    /// `(n_ob_bar, l_tot)` in evaluation order, current value first.
    pub evaluated: Vec<(usize, f64)>,
}

/// Candidates around `current`, clipped to `1..=max`, lower one first.
pub fn candidates(current: usize, max: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if current > 1 {
        out.push(current - 1);
    }
    if current < max {
        out.push(current + 1);
    }
    out
}

/// Scans candidates in order, accepting `n` when it lowers the running
/// minimum by a relative change larger than `f_r`.
pub fn apply_update_rule(current: usize, l_current: f64, scanned: &[(usize, f64)], f_r: f64) -> usize {
    let (mut best, mut l_min) = (current, l_current);
    for &(n, l) in scanned {
        if l < l_min && (1.0 - l / l_min).abs() > f_r {
            best = n;
            l_min = l;
        }
    }
    best
}

/// Evaluates `loss` on the candidates and applies the rule. `f_r = ∞`
/// short-circuits without any evaluation. Failed evaluations count as
/// infinite loss, so a failing current value accepts any finite candidate.
pub fn update_n_ob_bar<F>(current: usize, max: usize, f_r: f64, mut loss: F) -> (usize, Vec<(usize, f64)>)
where
    F: FnMut(usize) -> Option<f64>,
{
    if f_r.is_infinite() {
        return (current, Vec::new());
    }
    let mut evaluated = vec![(current, loss(current).unwrap_or(f64::INFINITY))];
    for n in candidates(current, max) {
        evaluated.push((n, loss(n).unwrap_or(f64::INFINITY)));
    }
    let l_current = evaluated[0].1;
    let next = if l_current.is_finite() {
        apply_update_rule(current, l_current, &evaluated[1..], f_r)
    } else {
        evaluated[1..]
            .iter()
            .filter(|(_, l)| l.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(current, |&(n, _)| n)
    };
    (next, evaluated)
}

/// Replays logged evaluations and returns the resulting sequence of
/// delay counts, starting from `initial`.
pub fn replay(initial: usize, log: &[DelayUpdate], f_r: f64) -> Vec<usize> {
    let mut seq = vec![initial];
    let mut cur = initial;
    for ev in log {
        if let Some(&(n, l)) = ev.evaluated.first() {
            debug_assert_eq!(n, cur);
            cur = if l.is_finite() {
                apply_update_rule(cur, l, &ev.evaluated[1..], f_r)
            } else {
                ev.to
            };
        }
        seq.push(cur);
    }
    seq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(vals: [f64; 3]) -> impl FnMut(usize) -> Option<f64> {
        move |n| Some(vals[n - 9])
    }

    #[test]
    fn accepts_large_improvement() {
        let (n, ev) = update_n_ob_bar(10, 20, 0.05, table([10.0, 8.0, 5.0]));
        assert_eq!(n, 11);
        assert_eq!(ev, vec![(10, 8.0), (9, 10.0), (11, 5.0)]);
    }

    #[test]
    fn keeps_on_small_changes() {
        assert_eq!(update_n_ob_bar(10, 20, 0.05, table([8.1, 8.0, 7.9])).0, 10);
    }

    #[test]
    fn infinite_threshold_never_moves() {
        let mut calls = 0;
        let (n, ev) = update_n_ob_bar(10, 20, f64::INFINITY, |_| {
            calls += 1;
            Some(0.0)
        });
        assert_eq!((n, ev.len(), calls), (10, 0, 0));
    }

    #[test]
    fn scan_order_updates_running_minimum() {
        // n−1 is accepted first; n+1 must then beat it by more than f_r
        assert_eq!(apply_update_rule(5, 10.0, &[(4, 5.0), (6, 4.9)], 0.05), 4);
        assert_eq!(apply_update_rule(5, 10.0, &[(4, 5.0), (6, 4.0)], 0.05), 6);
    }

    #[test]
    fn candidates_are_clipped() {
        assert_eq!(candidates(1, 20), vec![2]);
        assert_eq!(candidates(20, 20), vec![19]);
        assert_eq!(candidates(1, 1), Vec::<usize>::new());
    }

    #[test]
    fn replay_reproduces_sequence() {
        let mut cur = 10;
        let mut log = Vec::new();
        let mut seq = vec![cur];
        let vals = |n: usize, e: usize| Some(1.0 + (n as f64 - 13.0).abs() + 0.01 * e as f64);
        for e in 0..8 {
            let (next, evaluated) = update_n_ob_bar(cur, 20, 0.05, |n| vals(n, e));
            log.push(DelayUpdate {
                epoch: e,
                from: cur,
                to: next,
                evaluated,
            });
            cur = next;
            seq.push(cur);
        }
        assert_eq!(replay(10, &log, 0.05), seq);
        assert_eq!(*seq.last().unwrap(), 13);
    }
}
