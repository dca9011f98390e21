use alloc::vec::Vec;

use crate::TokenId;

/// A reuse-friendly processing order over a request list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    /// `order[k]` is the original index of the k-th request to process.
    pub order: Vec<usize>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Consecutive groups of at most `size` original indices.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = &[usize]> {
        self.order.chunks(size.max(1))
    }

    /// Items reordered by the schedule.
    pub fn apply<'a, T>(&self, items: &'a [T]) -> Vec<&'a T> {
        self.order.iter().map(|&i| &items[i]).collect()
    }
}

/// Orders requests lexicographically by tokens so that requests sharing a
/// prefix are adjacent. Equal requests keep their input order.
pub fn schedule<S: AsRef<[TokenId]>>(requests: &[S]) -> Schedule {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by(|&a, &b| {
        requests[a]
            .as_ref()
            .cmp(requests[b].as_ref())
            .then(a.cmp(&b))
    });
    Schedule { order }
}

/// Every prefix shared by at least two requests at a branch point, sorted
/// lexicographically (so each prefix precedes its extensions).
///
/// These are exactly the internal nodes of the radix trie over the requests:
/// once they are cached, whatever remains of each request is used by that
/// request alone.
pub fn shared_prefixes<S: AsRef<[TokenId]>>(requests: &[S]) -> Vec<Vec<TokenId>> {
    let sched = schedule(requests);
    let mut out: Vec<Vec<TokenId>> = sched
        .order
        .windows(2)
        .filter_map(|w| {
            let a = requests[w[0]].as_ref();
            let b = requests[w[1]].as_ref();
            let n = a.iter().zip(b).take_while(|(x, y)| x == y).count();
            (n > 0).then(|| a[..n].to_vec())
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sorted_input_keeps_order() {
        let reqs = vec![vec![1, 2], vec![1, 3], vec![2]];
        assert_eq!(schedule(&reqs).order, vec![0, 1, 2]);
    }

    #[test]
    fn interleaved_families_become_contiguous() {
        let reqs: Vec<Vec<TokenId>> = vec![
            vec![1, 1, 5],
            vec![9, 9, 1],
            vec![1, 1, 2],
            vec![9, 9, 0],
            vec![1, 1, 7],
        ];
        let s = schedule(&reqs);
        let fam: Vec<TokenId> = s.apply(&reqs).iter().map(|r| r[0]).collect();
        assert_eq!(fam, vec![1, 1, 1, 9, 9]);
        let mut oracle: Vec<(Vec<TokenId>, usize)> = reqs.iter().cloned().zip(0..).collect();
        oracle.sort();
        assert_eq!(s.order, oracle.iter().map(|(_, i)| *i).collect::<Vec<_>>());
    }

    #[test]
    fn batches_cover_order() {
        let reqs = vec![vec![3], vec![1], vec![2]];
        let s = schedule(&reqs);
        let b: Vec<Vec<usize>> = s.batches(2).map(|b| b.to_vec()).collect();
        assert_eq!(b, vec![vec![1, 2], vec![0]]);
    }

    #[test]
    fn shared_prefixes_are_branch_points() {
        let reqs: Vec<Vec<TokenId>> = vec![
            vec![1, 2, 3, 4],
            vec![1, 2, 7],
            vec![1, 2, 3, 9],
            vec![5, 6],
            vec![5, 6],
            vec![8],
        ];
        assert_eq!(
            shared_prefixes(&reqs),
            vec![vec![1, 2], vec![1, 2, 3], vec![5, 6]]
        );
    }
}
