use std::collections::BTreeMap;

use insitu_core::{PrunePlan, SimilarityReport};
use insitu_stream::{PruneAction, PruneCommand, ProposalGroup, PruneProposal};

/// The report's groups with their weakest internal correlation.
pub fn proposal_groups(report: &SimilarityReport) -> Vec<ProposalGroup> {
    report
        .groups
        .iter()
        .map(|g| ProposalGroup {
            members: g.members.clone(),
            keep: g.keep,
            min_pcc: report.min_within(g),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
enum Entry {
    Pending(PruneProposal),
    Resolved { layer: usize },
}

/// What a viewer's command turned out to mean.
#[derive(Clone, Debug, PartialEq)]
pub enum Resolution {
    Apply(PruneProposal),
    Dismissed(PruneProposal),
    /// Refused, with the reason sent back and the layer when known.
    Rejected(&'static str, Option<usize>),
}

/// Prune proposals sent to the viewer and their fate. Every id resolves at
/// most once.
#[derive(Debug, Default)]
pub struct ProposalBook {
    next_id: u64,
    entries: BTreeMap<u64, Entry>,
}

impl ProposalBook {
    pub fn new() -> Self {
        ProposalBook::default()
    }

    pub fn propose(&mut self, plan: PrunePlan, report: &SimilarityReport) -> PruneProposal {
        self.next_id += 1;
        let proposal = PruneProposal {
            proposal_id: self.next_id,
            plan,
            groups: proposal_groups(report),
            filter_count: report.filters(),
        };
        self.entries.insert(self.next_id, Entry::Pending(proposal.clone()));
        proposal
    }

    pub fn has_pending(&self, layer: usize) -> bool {
        self.entries
            .values()
            .any(|e| matches!(e, Entry::Pending(p) if p.plan.layer_id == layer))
    }

    /// Resolves a command. `filters` gives a layer's current filter count;
    /// a proposal made for a different width is stale.
    pub fn resolve(&mut self, cmd: &PruneCommand, filters: impl Fn(usize) -> Option<usize>) -> Resolution {
        let Some(entry) = self.entries.get_mut(&cmd.proposal_id) else {
            return Resolution::Rejected("unknown proposal", None);
        };
        let proposal = match entry {
            Entry::Resolved { layer } => return Resolution::Rejected("already resolved", Some(*layer)),
            Entry::Pending(p) => p.clone(),
        };
        let layer = proposal.plan.layer_id;
        *entry = Entry::Resolved { layer };
        if filters(layer) != Some(proposal.filter_count) {
            return Resolution::Rejected("superseded", Some(layer));
        }
        match cmd.action {
            PruneAction::Apply => Resolution::Apply(proposal),
            PruneAction::Dismiss => Resolution::Dismissed(proposal),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use insitu_core::{Group, Matrix};

    fn report(filters: usize) -> SimilarityReport {
        let data = (0..filters * filters)
            .map(|i| {
                let (r, c) = (i / filters, i % filters);
                if r == c || r + c == 1 { 1.0 } else { 0.0 }
            })
            .collect();
        let m = Matrix::new(filters, filters, data).unwrap();
        let groups = vec![Group { members: vec![0, 1], keep: 0 }];
        SimilarityReport::new(5, 0, &m, 0.97, groups)
    }

    fn plan() -> PrunePlan {
        insitu_core::plan_prune(&report(4)).unwrap()
    }

    fn cmd(id: u64, action: PruneAction) -> PruneCommand {
        PruneCommand { proposal_id: id, action }
    }

    #[test]
    fn ids_resolve_once() {
        let mut book = ProposalBook::new();
        let p = book.propose(plan(), &report(4));
        assert_eq!(p.proposal_id, 1);
        assert_eq!(p.groups[0].min_pcc, 1.0);
        assert!(book.has_pending(0));
        assert_eq!(book.resolve(&cmd(1, PruneAction::Apply), |_| Some(4)), Resolution::Apply(p));
        assert!(!book.has_pending(0));
        assert_eq!(
            book.resolve(&cmd(1, PruneAction::Apply), |_| Some(4)),
            Resolution::Rejected("already resolved", Some(0))
        );
        assert_eq!(
            book.resolve(&cmd(7, PruneAction::Dismiss), |_| Some(4)),
            Resolution::Rejected("unknown proposal", None)
        );
    }

    #[test]
    fn dismiss_and_stale() {
        let mut book = ProposalBook::new();
        let first = book.propose(plan(), &report(4));
        book.propose(plan(), &report(4));
        assert_eq!(
            book.resolve(&cmd(1, PruneAction::Dismiss), |_| Some(4)),
            Resolution::Dismissed(first)
        );
        assert_eq!(
            book.resolve(&cmd(2, PruneAction::Apply), |_| Some(3)),
            Resolution::Rejected("superseded", Some(0))
        );
    }
}
