mod common;

use std::sync::Arc;

use common::{harness, seed_corpus, synthetic_essay, Harness};
use rubrag_core::agent::Assessment;
use rubrag_core::corpus::DocType;
use rubrag_core::review::{AssessmentStatus, AuditAction, CrashPoint, ReviewError};
use rubrag_core::rubric::{BandLabel, RubricError};
use rubrag_core::vindex::QueryFilter;

fn graded(h: &Harness, seed: u64, cohort: Option<&str>) -> Assessment {
    let sub = h
        .engine
        .submit(&format!("student{seed}"), &synthetic_essay(seed, 120), cohort.map(String::from))
        .unwrap();
    h.engine.grade_submission(&sub.id, None).unwrap()
}

fn approved_docs(h: &Harness) -> usize {
    h.engine
        .index
        .snapshot()
        .documents()
        .filter(|d| d.doc_type == DocType::ApprovedFeedback)
        .count()
}

#[test]
fn approve_reingests_exactly_one_document() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    seed_corpus(&h.engine);
    let a = graded(&h, 1, None);
    let before = h.engine.index.len();
    let doc = h.engine.review.approve(&a.id, "lecturer1").unwrap();
    assert_eq!(h.engine.index.len(), before + 1);
    assert_eq!(doc.doc_type, DocType::ApprovedFeedback);
    let prov = doc.provenance.as_ref().unwrap();
    assert_eq!((prov.submission_id.as_str(), prov.reviewer_id.as_str()), (a.submission_id.as_str(), "lecturer1"));
    for c in &h.engine.rubric.criteria {
        assert!(doc.text.contains(&format!("## {}\n", c.name)));
    }
    assert!(doc.text.contains("## Overall\n"));
    assert_eq!(h.engine.corpus.get(&doc.id).unwrap().id, doc.id);

    let stored = h.engine.assessments.get(&a.id).unwrap();
    assert_eq!(stored.status, AssessmentStatus::Approved);
    assert_eq!(stored.review_trail.last().unwrap().action, AuditAction::Approved);

    match h.engine.review.approve(&a.id, "lecturer2") {
        Err(ReviewError::InvalidState { from: AssessmentStatus::Approved, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(h.engine.review.approve("missing", "x"), Err(ReviewError::NotFound(_))));
    assert_eq!(h.engine.index.len(), before + 1);
}

#[test]
fn approved_feedback_is_retrievable_by_its_essay() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let a = graded(&h, 2, None);
    let doc = h.engine.review.approve(&a.id, "r").unwrap();
    let essay = h.engine.submissions.get(&a.submission_id).unwrap().essay_text;
    let q = h.engine.embedder.embed(&essay).unwrap();
    let hits = h.engine.index.query(&q, 5, &QueryFilter::all()).unwrap();
    assert!(hits.len() < 5);
    assert!(hits.iter().any(|r| r.doc_id == doc.id));
}

#[test]
fn edit_recomputes_total() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let a = graded(&h, 3, None);
    assert_eq!(a.total_percent, 72.0);
    let mut scores = a.criterion_scores.clone();
    let i = scores.iter().position(|s| s.percent == 75.0).unwrap();
    scores[i].percent = 78.0;
    scores[i].comment = "Sound approach, alternatives considered.".into();
    h.engine.review.edit_and_approve(&a.id, "r", scores, &a.overall_comment).unwrap();
    let stored = h.engine.assessments.get(&a.id).unwrap();
    let weight = h.engine.rubric.criteria[i].weight_percent;
    assert!((stored.total_percent - (72.0 + 3.0 * weight / 100.0)).abs() < 1e-9);
    assert_eq!(stored.status, AssessmentStatus::Approved);
    let entry = stored.review_trail.last().unwrap();
    assert_eq!(entry.action, AuditAction::EditedAndApproved);
    let diff = entry.diff_summary.as_deref().unwrap();
    assert!(diff.contains("percent 75 -> 78") && diff.contains("comment edited"), "{diff}");
}

#[test]
fn edit_with_band_mismatch_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let a = graded(&h, 4, None);
    let before = h.engine.index.len();
    let mut scores = a.criterion_scores.clone();
    scores[1].band = BandLabel::Satisfactory;
    scores[1].percent = 85.0;
    match h.engine.review.edit_and_approve(&a.id, "r", scores, "x") {
        Err(ReviewError::Rubric(RubricError::BandPercentMismatch { .. })) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(h.engine.assessments.get(&a.id).unwrap(), a);
    assert_eq!(h.engine.index.len(), before);
}

#[test]
fn unchanged_edit_records_no_changes() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let a = graded(&h, 5, None);
    h.engine
        .review
        .edit_and_approve(&a.id, "r", a.criterion_scores.clone(), &a.overall_comment)
        .unwrap();
    let stored = h.engine.assessments.get(&a.id).unwrap();
    assert_eq!(stored.status, AssessmentStatus::Approved);
    assert_eq!(stored.review_trail.last().unwrap().diff_summary.as_deref(), Some("no changes"));
}

#[test]
fn reject_paths() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    let a = graded(&h, 6, None);
    let b = graded(&h, 7, None);
    let index_before = h.engine.index.len();
    let queue_before = h.engine.submissions.queue_len();

    assert!(matches!(h.engine.review.reject(&a.id, "r", "  ", false), Err(ReviewError::EmptyReason)));
    h.engine.review.reject(&a.id, "r", "feedback too generic", false).unwrap();
    assert_eq!(h.engine.index.len(), index_before);
    assert_eq!(h.engine.submissions.queue_len(), queue_before);
    let stored = h.engine.assessments.get(&a.id).unwrap();
    assert_eq!(stored.status, AssessmentStatus::Rejected);
    assert_eq!(stored.review_trail.last().unwrap().note.as_deref(), Some("feedback too generic"));

    h.engine.review.reject(&b.id, "r", "wrong band for reflection", true).unwrap();
    assert_eq!(h.engine.submissions.queue_len(), queue_before + 1);
    assert!(h.engine.submissions.is_queued(&b.submission_id));
    let trail = h.engine.assessments.get(&b.id).unwrap().review_trail;
    let actions: Vec<AuditAction> = trail.iter().map(|e| e.action).collect();
    assert_eq!(actions, [AuditAction::Submitted, AuditAction::Rejected, AuditAction::RegenerationRequested]);
    assert_eq!(h.engine.index.len(), index_before);

    let regraded = h.engine.grade_queue(None);
    assert_eq!((regraded.graded, regraded.failed), (1, 0));
    assert_eq!(h.engine.submissions.queue_len(), queue_before);

    let c = graded(&h, 8, None);
    h.engine.review.approve(&c.id, "r").unwrap();
    assert!(matches!(
        h.engine.review.reject(&c.id, "r", "late change of mind", false),
        Err(ReviewError::InvalidState { .. })
    ));
}

#[test]
fn pending_listing_and_rate() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    assert!(h.engine.review.list_pending(None).is_empty());
    assert!(matches!(h.engine.review.approval_rate(None), Err(ReviewError::NoDecidedAssessments)));
    let ids: Vec<String> = (0..3).map(|i| graded(&h, 20 + i, Some("2025")).id).collect();
    h.engine.review.approve(&ids[1], "r").unwrap();
    let pending = h.engine.review.list_pending(None);
    assert_eq!(pending.iter().map(|a| a.id.as_str()).collect::<Vec<_>>(), [ids[0].as_str(), ids[2].as_str()]);
    assert!(pending.windows(2).all(|w| w[0].generated_at <= w[1].generated_at));
    assert_eq!(h.engine.review.list_pending(Some("2025")).len(), 2);
    assert!(h.engine.review.list_pending(Some("2019")).is_empty());
    h.engine.review.reject(&ids[0], "r", "too lenient", false).unwrap();
    assert_eq!(h.engine.review.approval_rate(None).unwrap(), 0.5);
    assert!(matches!(h.engine.review.approval_rate(Some("2019")), Err(ReviewError::NoDecidedAssessments)));
}

#[test]
fn conservation_and_audit_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let h = harness(dir.path());
    seed_corpus(&h.engine);
    let mut trails: Vec<(String, usize)> = Vec::new();
    for i in 0..8 {
        let a = graded(&h, 30 + i, None);
        trails.push((a.id.clone(), a.review_trail.len()));
        match i % 3 {
            0 => drop(h.engine.review.approve(&a.id, "r").unwrap()),
            1 => drop(h.engine.review.edit_and_approve(&a.id, "r", a.criterion_scores.clone(), "Edited overall.").unwrap()),
            _ => h.engine.review.reject(&a.id, "r", "no", i % 2 == 0).unwrap(),
        }
    }
    let approved = h.engine.assessments.list(Some(AssessmentStatus::Approved), None).len();
    assert_eq!(approved_docs(&h), approved);
    for (id, len) in trails {
        let trail = h.engine.assessments.get(&id).unwrap().review_trail;
        assert!(trail.len() > len);
        assert!(trail.windows(2).all(|w| w[0].at <= w[1].at));
    }
}

#[test]
fn crash_recovery_is_consistent() {
    for point in [CrashPoint::AfterIntent, CrashPoint::AfterStatusWrite, CrashPoint::AfterCorpusWrite] {
        let dir = tempfile::tempdir().unwrap();
        let (id, index_before) = {
            let h = harness(dir.path());
            seed_corpus(&h.engine);
            let a = graded(&h, 40, None);
            let n = h.engine.index.len();
            h.engine.review.inject_crash(Some(point));
            assert!(matches!(h.engine.review.approve(&a.id, "r"), Err(ReviewError::InjectedCrash(p)) if p == point));
            (a.id, n)
        };
        let h = harness(dir.path());
        let a = h.engine.assessments.get(&id).unwrap();
        assert_eq!(a.status, AssessmentStatus::Approved, "{point:?}");
        assert_eq!(h.engine.index.len(), index_before + 1, "{point:?}");
        assert_eq!(approved_docs(&h), 1, "{point:?}");
        assert_eq!(h.engine.corpus.list(Some(DocType::ApprovedFeedback), None).len(), 1, "{point:?}");
        assert_eq!(h.engine.review.recover().unwrap(), 0);
    }
}

#[test]
fn crashed_reject_with_regeneration_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let (id, sub) = {
        let h = harness(dir.path());
        let a = graded(&h, 41, None);
        h.engine.review.inject_crash(Some(CrashPoint::AfterIntent));
        assert!(h.engine.review.reject(&a.id, "r", "redo", true).is_err());
        (a.id, a.submission_id)
    };
    let h = harness(dir.path());
    assert_eq!(h.engine.assessments.get(&id).unwrap().status, AssessmentStatus::Rejected);
    assert!(h.engine.submissions.is_queued(&sub));
}

#[test]
fn concurrent_decisions_on_one_assessment() {
    let dir = tempfile::tempdir().unwrap();
    let h = Arc::new(harness(dir.path()));
    let a = graded(&h, 50, None);
    let outcomes: Vec<bool> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let h = h.clone();
                let id = a.id.clone();
                s.spawn(move || {
                    let r = if i % 2 == 0 {
                        h.engine.review.approve(&id, &format!("r{i}")).map(|_| ())
                    } else {
                        h.engine.review.reject(&id, &format!("r{i}"), "no", false)
                    };
                    match r {
                        Ok(()) => true,
                        Err(ReviewError::InvalidState { .. }) => false,
                        Err(e) => panic!("{e}"),
                    }
                })
            })
            .collect();
        handles.into_iter().map(|t| t.join().unwrap()).collect()
    });
    assert_eq!(outcomes.iter().filter(|ok| **ok).count(), 1);
    let stored = h.engine.assessments.get(&a.id).unwrap();
    assert_eq!(stored.review_trail.len(), 2);
    let expected_docs = usize::from(stored.status == AssessmentStatus::Approved);
    assert_eq!(approved_docs(&h), expected_docs);
}

#[test]
fn concurrent_decisions_on_distinct_assessments() {
    let dir = tempfile::tempdir().unwrap();
    let h = Arc::new(harness(dir.path()));
    let ids: Vec<String> = (0..6).map(|i| graded(&h, 60 + i, None).id).collect();
    std::thread::scope(|s| {
        for id in &ids {
            let h = h.clone();
            s.spawn(move || h.engine.review.approve(id, "r").unwrap());
        }
    });
    assert_eq!(approved_docs(&h), 6);
    assert_eq!(h.engine.review.approval_rate(None).unwrap(), 1.0);
}
