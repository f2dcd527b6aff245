use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedStory, CharacterAnnotation, EmotionVote};
use crate::codec::EmotionLabel;

const NAMES: &[&str] = &[
    "tom", "jessica", "man", "people", "anna", "ben", "carl", "dana", "emma", "frank", "gina",
    "henry", "iris", "jack", "kate", "leo", "mia", "nick", "olga", "paul", "rosa", "sam", "tina",
    "umar", "vera", "will", "xena", "yuri", "zoe", "adam", "beth", "chad", "dora", "eli", "fay",
    "gus", "hana", "ivan", "jill", "kyle", "lily", "max", "nora", "omar", "pia", "ray", "sara",
    "ted", "una", "vic", "wes", "amy", "bob", "cleo", "dan", "eve", "fred", "gail", "hugo", "ida",
    "joe", "kim", "lou", "meg", "ned", "opal", "pete", "quin", "rick", "sue", "tara", "uma",
    "val", "walt", "yara", "zack", "alma", "bart", "cora", "drew", "edna", "finn", "greg", "hope",
    "igor", "june", "kurt", "lena", "mark", "nina", "otto", "rita", "seth", "tess", "vince",
    "wanda", "abe", "bea", "cody", "dina",
];

/// Names in the vocabulary that never occur in synthetic stories.
const PROBES: &[&str] = &[
    "aldo", "bruna", "cyril", "delia", "egon", "flora", "gideon", "hilda", "ingo", "jolene",
    "kasper", "lorna", "magnus", "nadia", "orson", "petra", "quentin", "rhoda", "silas", "thea",
    "ulric", "vesna", "waldo", "xavier", "yolanda", "zeno", "anselm", "brigid", "casimir",
    "dagny", "elmer", "fenna", "gunther", "hester", "isidor", "jorun", "konrad", "liesel",
    "marek", "nelda",
];

const PLACES: &[&str] = &[
    "city", "small town", "museum", "river", "forest", "beach", "school", "market", "old mill",
    "harbor", "library", "park", "farm", "station", "bakery",
];

const ACTIONS: &[&str] = &[
    "to catch the thief",
    "to call the police",
    "to learn new things",
    "to see the museums",
    "to go out to some interesting place",
    "to buy a new car",
    "to bake a cake",
    "to find the lost dog",
    "to win the race",
    "to fix the old bike",
    "to visit the farm",
    "to paint the fence",
    "to cook dinner",
    "to read a book",
    "to climb the hill",
    "to plant a garden",
    "to sell the house",
    "to write a letter",
    "to clean the room",
    "to help a friend",
    "to play the piano",
    "to watch a movie",
    "to swim in the lake",
    "to build a boat",
    "to sing a song",
    "to fly a kite",
    "to feed the cat",
    "to open a shop",
    "to save money",
    "to find a job",
];

const KEYWORDS: [&str; EmotionLabel::COUNT] = [
    "happy", "safe", "scared", "amazed", "sad", "sick", "furious", "eager", "calm",
];

/// The single word a synthetic sentence uses to express `e`.
pub fn emotion_keyword(e: EmotionLabel) -> &'static str {
    KEYWORDS[e.id()]
}

pub fn keyword_emotion(word: &str) -> Option<EmotionLabel> {
    KEYWORDS
        .iter()
        .position(|k| *k == word)
        .and_then(EmotionLabel::from_id)
}

pub fn training_names() -> &'static [&'static str] {
    NAMES
}

pub fn probe_names() -> &'static [&'static str] {
    PROBES
}

struct Slot {
    name: &'static str,
    actions: Vec<String>,
}

struct Skeleton {
    cast: Vec<&'static str>,
    place: &'static str,
    /// Sentences 2..=5, one or two characters each.
    sentences: Vec<Vec<Slot>>,
}

fn votes(rng: &mut ChaCha8Rng, label: EmotionLabel) -> Vec<EmotionVote> {
    let other = EmotionLabel::ALL[(label.id() + rng.gen_range(1..EmotionLabel::COUNT)) % EmotionLabel::COUNT];
    vec![
        EmotionVote { label, conf: two_places(rng.gen_range(0.6..=1.0)) },
        EmotionVote { label: other, conf: two_places(rng.gen_range(0.1..=0.4)) },
        EmotionVote { label, conf: two_places(rng.gen_range(0.6..=1.0)) },
    ]
}

fn two_places(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn clause(slot: usize, name: &str, actions: &[String], e: EmotionLabel) -> String {
    let mut s = format!("{name} felt {}", emotion_keyword(e));
    if !actions.is_empty() {
        let verb = if slot == 0 { "wanted" } else { "tried" };
        s.push_str(&format!(" and {verb} {}", actions.join(" and ")));
    }
    s
}

/// Five-sentence template stories. Every sentence after the first
/// realizes its annotated conditions verbatim:
/// `name felt <keyword> and wanted <action>`, two characters joined by
/// `while`. Emotions are drawn from a shuffled pool holding each label
/// equally often, so the histogram is flat and carries no order.
pub fn synth_corpus(seed: u64, n_stories: usize) -> Vec<AnnotatedStory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeletons: Vec<Skeleton> = (0..n_stories).map(|_| skeleton(&mut rng)).collect();
    let slots: usize = skeletons
        .iter()
        .map(|s| 1 + s.sentences.iter().map(Vec::len).sum::<usize>())
        .sum();
    let mut pool: Vec<EmotionLabel> = (0..slots).map(|i| EmotionLabel::ALL[i % EmotionLabel::COUNT]).collect();
    pool.shuffle(&mut rng);
    let mut labels = pool.into_iter();

    let mut stories = Vec::with_capacity(n_stories);
    for (i, sk) in skeletons.into_iter().enumerate() {
        let e = labels.next().expect("pool sized");
        let first = sk.cast[0];
        let mut sentences = vec![format!("{first} felt {} near the {} .", emotion_keyword(e), sk.place)];
        let mut annotations = vec![vec![CharacterAnnotation {
            name: first.to_string(),
            actions: Vec::new(),
            emotion_votes: votes(&mut rng, e),
        }]];
        for slots in sk.sentences {
            let mut clauses = Vec::new();
            let mut anns = Vec::new();
            for (k, slot) in slots.into_iter().enumerate() {
                let e = labels.next().expect("pool sized");
                clauses.push(clause(k, slot.name, &slot.actions, e));
                anns.push(CharacterAnnotation {
                    name: slot.name.to_string(),
                    actions: slot.actions,
                    emotion_votes: votes(&mut rng, e),
                });
            }
            sentences.push(format!("{} .", clauses.join(" while ")));
            annotations.push(anns);
        }
        stories.push(AnnotatedStory {
            id: format!("synth-{seed}-{i:04}"),
            sentences,
            annotations,
        });
    }
    stories
}

fn skeleton(rng: &mut ChaCha8Rng) -> Skeleton {
    let n_cast = if rng.gen_bool(0.3) { 3 } else { 2 };
    let cast: Vec<&'static str> = NAMES.choose_multiple(rng, n_cast).copied().collect();
    let place = PLACES.choose(rng).expect("places");
    let sentences = (1..5)
        .map(|_| {
            let n_chars = if rng.gen_bool(0.75) { 2 } else { 1 };
            let chars: Vec<&'static str> = cast.choose_multiple(rng, n_chars).copied().collect();
            chars
                .into_iter()
                .map(|name| {
                    let n_actions = match rng.gen_range(0..20) {
                        0..=2 => 0,
                        3..=16 => 1,
                        _ => 2,
                    };
                    let actions = ACTIONS.choose_multiple(rng, n_actions).map(|a| a.to_string()).collect();
                    Slot { name, actions }
                })
                .collect()
        })
        .collect();
    Skeleton { cast, place, sentences }
}
