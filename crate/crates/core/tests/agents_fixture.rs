use regionkg::agents::{
    parse_response, propose_metapaths, run_communication_round, AgentError, AgentTask, ChatClient,
    CommunicationFlags, MockClient, MockFixture, MAX_REPAIRS,
};
use regionkg::kg::Schema;
use regionkg::metapath::parse_metapath;

const TASKS: [(&str, &str); 4] = [
    ("population", "the number of residents"),
    ("commercial", "commercial activeness"),
    (
        "user_activity",
        "user activity, measured as check-in volume",
    ),
    ("rating", "the average rating of POIs"),
];

fn tasks() -> Vec<AgentTask> {
    TASKS.iter().map(|(n, d)| AgentTask::new(n, d)).collect()
}

fn clients(n: usize) -> Vec<Box<dyn ChatClient>> {
    (0..n)
        .map(|_| Box::new(MockClient::new(MockFixture::shipped())) as Box<dyn ChatClient>)
        .collect()
}

#[test]
fn every_shipped_response_is_clean() {
    let schema = Schema::default_lbkg();
    for (call, responses) in &MockFixture::shipped().responses {
        for r in responses {
            let parsed = parse_response(r, &schema);
            assert!(parsed.problems.is_empty(), "{call}: {:?}", parsed.problems);
            let want = if call.starts_with("recommend/") { 1 } else { 3 };
            assert_eq!(parsed.paths.len(), want, "{call}");
            assert!(
                parsed
                    .paths
                    .iter()
                    .all(|p| p.reason.is_some() && p.path.label().is_some()),
                "{call}"
            );
        }
    }
}

#[test]
fn user_activity_transcription() {
    let schema = Schema::default_lbkg();
    let mut client = MockClient::new(MockFixture::shipped());
    let (round1, _) = propose_metapaths(&mut client, &schema, &tasks()[2], 3).unwrap();
    let expect = [
        "Region -[HasStoreOf]-> Brand -[BrandExistIn]-> POI -[LocateAt]-> Region",
        "Region -[ServedBy]-> BusinessArea -[Contain]-> POI -[LocateAt]-> Region",
        "Region -[Has]-> POI -[HasCategory1Of]-> Category1 -[Category1ExistIn]-> POI -[LocateAt]-> Region",
    ];
    let got: Vec<String> = round1.iter().map(|p| p.pattern()).collect();
    assert_eq!(got, expect);

    let round1: Vec<_> = tasks()
        .iter()
        .map(|t| {
            propose_metapaths(&mut MockClient::new(MockFixture::shipped()), &schema, t, 3)
                .unwrap()
                .0
        })
        .collect();
    let out = run_communication_round(
        &mut clients(4),
        &schema,
        &tasks(),
        &round1,
        3,
        CommunicationFlags::default(),
    )
    .unwrap();
    let five_hop = parse_metapath(
        "Region -[HasStoreOf]-> Brand -[BelongToCategory1]-> Category1 -[Category1HasBrandOf]-> Brand -[BrandExistIn]-> POI -[LocateAt]-> Region",
        &schema,
    )
    .unwrap();
    assert_eq!(five_hop.hops().len(), 5);
    assert!(out.self_updated[2].contains(&five_hop));
    let (from, rec) = &out.recommended[2][0];
    assert_eq!(from, "population");
    assert_eq!(
        rec.pattern(),
        "Region -[PopulationFlowTo]-> Region -[Has]-> POI -[HasCategory1Of]-> Category1 -[Category1ExistIn]-> POI -[LocateAt]-> Region"
    );
    assert_eq!(out.pre_dedup, vec![6, 6, 6, 6]);
    assert_eq!(
        out.paths.iter().map(Vec::len).collect::<Vec<_>>(),
        vec![6, 6, 5, 6]
    );
    assert_eq!(out.dedup_notes[2].len(), 1);
    assert!(out.dedup_notes[2][0].contains("recommendation from rating"));
    // self-updates first, then recommendations in task order
    assert_eq!(out.transcripts.len(), 4 + 12);
    assert!(out.transcripts[..4]
        .iter()
        .all(|t| t.call.key().starts_with("self_update/")));
}

#[test]
fn repair_loop_gives_up_after_the_limit() {
    let schema = Schema::default_lbkg();
    let bad = "Region -[Nope]-> POI";
    let responses = vec![bad; MAX_REPAIRS + 1];
    let fixture = MockFixture::default().with("propose/population", &responses);
    let mut client = MockClient::new(fixture);
    match propose_metapaths(&mut client, &schema, &tasks()[0], 1) {
        Err(AgentError::Validation {
            attempts,
            transcript,
            ..
        }) => {
            assert_eq!(attempts, MAX_REPAIRS + 1);
            assert_eq!(transcript.turns.len(), MAX_REPAIRS + 1);
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn ablated_rounds_skip_their_calls() {
    let schema = Schema::default_lbkg();
    let round1: Vec<_> = tasks()
        .iter()
        .map(|t| {
            propose_metapaths(&mut MockClient::new(MockFixture::shipped()), &schema, t, 3)
                .unwrap()
                .0
        })
        .collect();
    let no_su = CommunicationFlags {
        no_self_update: true,
        no_rec: false,
    };
    let out =
        run_communication_round(&mut clients(4), &schema, &tasks(), &round1, 3, no_su).unwrap();
    assert!(out.self_updated.iter().all(Vec::is_empty));
    assert!(out
        .transcripts
        .iter()
        .all(|t| t.call.key().starts_with("recommend/")));
    let no_rec = CommunicationFlags {
        no_self_update: false,
        no_rec: true,
    };
    let out =
        run_communication_round(&mut clients(4), &schema, &tasks(), &round1, 3, no_rec).unwrap();
    assert!(out.recommended.iter().all(Vec::is_empty));
    assert_eq!(out.paths, out.self_updated);
    let both = CommunicationFlags {
        no_self_update: true,
        no_rec: true,
    };
    assert!(run_communication_round(&mut clients(4), &schema, &tasks(), &round1, 3, both).is_err());
}
