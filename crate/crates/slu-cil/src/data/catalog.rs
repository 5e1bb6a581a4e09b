//! Default synthetic catalog: the 18 home-assistant scenarios with
//! mostly-disjoint action and entity-type inventories and Zipf-like
//! frequencies, so cardinality-ordered task schedules are meaningful.
//!
//! Action names and entity types are unique to their scenario by
//! construction; surface words may repeat across scenarios.

use super::{CorpusSpec, EntityTypeSpec, ScenarioSpec, TemplateSpec};

fn entity(name: &str, values: &[&str]) -> EntityTypeSpec {
    EntityTypeSpec {
        name: name.into(),
        values: values.iter().map(|v| v.to_string()).collect(),
    }
}

fn tpl(action: &str, text: &str) -> TemplateSpec {
    TemplateSpec {
        action: action.into(),
        text: text.into(),
    }
}

fn scenario(
    name: &str,
    rank: usize,
    actions: &[&str],
    entity_types: Vec<EntityTypeSpec>,
    templates: Vec<TemplateSpec>,
) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        frequency: 1.0 / (rank as f64).sqrt(),
        actions: actions.iter().map(|a| a.to_string()).collect(),
        entity_types,
        templates,
    }
}

/// The default corpus spec: 18 scenarios, Zipf-like frequencies
/// (1/sqrt(rank), so later tasks keep a workable amount of data),
/// 2–3 actions and up to 3 entity types each.
pub fn default_catalog(seed: u64, samples_per_scenario: usize, noise_sigma: f64) -> CorpusSpec {
    CorpusSpec {
        seed,
        samples_per_scenario,
        noise_sigma,
        feature_dim: 16,
        scenarios: vec![
            scenario(
                "qa",
                1,
                &["factoid", "definition", "currency"],
                vec![
                    entity("qa_topic", &["volcanoes", "gravity", "pluto", "oxygen", "einstein"]),
                    entity("qa_currency", &["euros", "yen", "pesos", "rupees"]),
                ],
                vec![
                    tpl("factoid", "what is {qa_topic}"),
                    tpl("factoid", "tell me about {qa_topic}"),
                    tpl("definition", "define {qa_topic} for me"),
                    tpl("definition", "what does {qa_topic} mean"),
                    tpl("currency", "convert ten dollars to {qa_currency}"),
                    tpl("currency", "how many {qa_currency} per dollar"),
                ],
            ),
            scenario(
                "music",
                2,
                &["likeness", "identify", "shuffle"],
                vec![entity(
                    "music_genre",
                    &["jazz", "rock", "blues", "techno", "opera"],
                )],
                vec![
                    tpl("likeness", "i like {music_genre}"),
                    tpl("likeness", "i love listening to {music_genre}"),
                    tpl("identify", "what song is this"),
                    tpl("identify", "who sings this song"),
                    tpl("shuffle", "shuffle my {music_genre} playlist"),
                ],
            ),
            scenario(
                "weather",
                3,
                &["lookup", "forecast"],
                vec![
                    entity("weather_descriptor", &["rain", "snow", "wind", "fog", "sunshine"]),
                    entity("weather_city", &["london", "paris", "tokyo", "oslo", "cairo"]),
                ],
                vec![
                    tpl("lookup", "whats the weather in {weather_city}"),
                    tpl("lookup", "is there {weather_descriptor} in {weather_city}"),
                    tpl("forecast", "will we get {weather_descriptor} tomorrow"),
                    tpl("forecast", "do i need an umbrella today"),
                ],
            ),
            scenario(
                "calendar",
                4,
                &["set", "remove", "inspect"],
                vec![
                    entity("event_name", &["dentist", "standup", "birthday", "yoga", "interview"]),
                    entity("calendar_date", &["next monday", "this friday", "tomorrow morning"]),
                ],
                vec![
                    tpl("set", "add {event_name} to my calendar on {calendar_date}"),
                    tpl("set", "schedule {event_name} for {calendar_date}"),
                    tpl("remove", "delete my {event_name} appointment"),
                    tpl("inspect", "whats on my calendar for {calendar_date}"),
                ],
            ),
            scenario(
                "email",
                5,
                &["send", "reply", "check"],
                vec![entity("email_contact", &["alice", "bob", "carol", "david", "mom"])],
                vec![
                    tpl("send", "send an email to {email_contact}"),
                    tpl("send", "write a message to {email_contact}"),
                    tpl("reply", "did {email_contact} reply to me"),
                    tpl("check", "check my inbox please"),
                ],
            ),
            scenario(
                "iot",
                6,
                &["on", "off", "dim"],
                vec![entity("iot_device", &["lights", "heater", "fan", "kettle", "tv"])],
                vec![
                    tpl("on", "turn on the {iot_device}"),
                    tpl("off", "switch off the {iot_device}"),
                    tpl("dim", "dim the {iot_device} a little"),
                ],
            ),
            scenario(
                "play",
                7,
                &["radio", "podcast", "game"],
                vec![
                    entity("play_station", &["capital", "kiss", "heart"]),
                    entity("podcast_topic", &["history", "crime", "comedy"]),
                ],
                vec![
                    tpl("radio", "play {play_station} radio"),
                    tpl("podcast", "play a {podcast_topic} podcast"),
                    tpl("game", "lets play a quiz game"),
                ],
            ),
            scenario(
                "news",
                8,
                &["headlines", "briefing"],
                vec![entity("news_topic", &["politics", "sports", "finance", "science"])],
                vec![
                    tpl("headlines", "whats the latest on {news_topic}"),
                    tpl("headlines", "give me the {news_topic} headlines"),
                    tpl("briefing", "read me my morning briefing"),
                ],
            ),
            scenario(
                "transport",
                9,
                &["taxi", "train", "traffic"],
                vec![entity(
                    "transport_destination",
                    &["airport", "downtown", "office", "harbor"],
                )],
                vec![
                    tpl("taxi", "get me a taxi to the {transport_destination}"),
                    tpl("train", "when is the next train to the {transport_destination}"),
                    tpl("traffic", "hows the traffic to the {transport_destination}"),
                ],
            ),
            scenario(
                "datetime",
                10,
                &["time", "convert"],
                vec![entity("datetime_zone", &["berlin", "sydney", "moscow", "denver"])],
                vec![
                    tpl("time", "what time is it in {datetime_zone}"),
                    tpl("time", "what day is it today"),
                    tpl("convert", "convert this time to {datetime_zone}"),
                ],
            ),
            scenario(
                "lists",
                11,
                &["create", "append", "strike"],
                vec![
                    entity("list_item", &["milk", "eggs", "batteries", "soap", "bread"]),
                    entity("list_label", &["shopping", "todo", "grocery"]),
                ],
                vec![
                    tpl("create", "create a {list_label} list"),
                    tpl("append", "add {list_item} to my {list_label} list"),
                    tpl("strike", "remove {list_item} from the list"),
                ],
            ),
            scenario(
                "audio",
                12,
                &["up", "down", "mute"],
                vec![entity("audio_level", &["half", "full", "low"])],
                vec![
                    tpl("up", "turn the volume up"),
                    tpl("down", "turn it down a bit"),
                    tpl("mute", "mute the speaker"),
                    tpl("up", "set the volume to {audio_level}"),
                ],
            ),
            scenario(
                "social",
                13,
                &["post", "trending", "share"],
                vec![entity("social_network", &["twitter", "facebook", "instagram"])],
                vec![
                    tpl("post", "post this on {social_network}"),
                    tpl("trending", "whats trending on {social_network}"),
                    tpl("share", "share my photo on {social_network}"),
                ],
            ),
            scenario(
                "cooking",
                14,
                &["recipe", "duration"],
                vec![entity("cooking_dish", &["pasta", "curry", "pancakes", "risotto", "soup"])],
                vec![
                    tpl("recipe", "how do i cook {cooking_dish}"),
                    tpl("recipe", "find a recipe for {cooking_dish}"),
                    tpl("duration", "how long do i boil {cooking_dish}"),
                ],
            ),
            scenario(
                "alarm",
                15,
                &["wake", "cancel", "review"],
                vec![entity("alarm_time", &["six am", "seven thirty", "eight pm", "noon"])],
                vec![
                    tpl("wake", "set an alarm for {alarm_time}"),
                    tpl("cancel", "cancel my {alarm_time} alarm"),
                    tpl("review", "what alarms do i have"),
                ],
            ),
            scenario(
                "takeaway",
                16,
                &["order", "track", "hours"],
                vec![entity("takeaway_food", &["pizza", "sushi", "burgers", "noodles", "tacos"])],
                vec![
                    tpl("order", "order some {takeaway_food} for dinner"),
                    tpl("track", "where is my {takeaway_food} order"),
                    tpl("hours", "is the {takeaway_food} place open"),
                ],
            ),
            scenario(
                "recommendation",
                17,
                &["movies", "restaurants", "events"],
                vec![
                    entity("recommendation_type", &["thriller", "comedy", "documentary"]),
                    entity("recommendation_cuisine", &["thai", "italian", "mexican"]),
                ],
                vec![
                    tpl("movies", "recommend a good {recommendation_type} movie"),
                    tpl("restaurants", "find me a {recommendation_cuisine} restaurant nearby"),
                    tpl("events", "any events happening this weekend"),
                ],
            ),
            scenario(
                "general",
                18,
                &["greet", "joke", "sing"],
                vec![entity("general_subject", &["life", "work", "robots"])],
                vec![
                    tpl("greet", "hello there assistant"),
                    tpl("joke", "tell me a joke about {general_subject}"),
                    tpl("sing", "sing me a song"),
                ],
            ),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn catalog_is_a_valid_spec() {
        let spec = default_catalog(1, 360, 0.1);
        spec.validate().unwrap();
        assert_eq!(spec.scenarios.len(), 18);
    }

    #[test]
    fn actions_and_entity_types_are_scenario_specific() {
        let spec = default_catalog(1, 360, 0.1);
        let mut action_owner: BTreeMap<String, String> = BTreeMap::new();
        let mut entity_owner: BTreeMap<String, String> = BTreeMap::new();
        for s in &spec.scenarios {
            for a in &s.actions {
                if let Some(prev) = action_owner.insert(a.clone(), s.name.clone()) {
                    panic!("action {} owned by both {} and {}", a, prev, s.name);
                }
            }
            for e in &s.entity_types {
                if let Some(prev) = entity_owner.insert(e.name.clone(), s.name.clone()) {
                    panic!("entity type {} owned by both {} and {}", e.name, prev, s.name);
                }
            }
        }
    }

    #[test]
    fn frequencies_strictly_decrease() {
        let spec = default_catalog(1, 360, 0.1);
        for pair in spec.scenarios.windows(2) {
            assert!(pair[0].frequency > pair[1].frequency);
        }
    }

    #[test]
    fn scenario_names_match_the_reference_inventory() {
        let spec = default_catalog(1, 360, 0.1);
        let mut names: Vec<&str> = spec.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort();
        assert_eq!(
            names,
            vec![
                "alarm", "audio", "calendar", "cooking", "datetime", "email", "general", "iot",
                "lists", "music", "news", "play", "qa", "recommendation", "social", "takeaway",
                "transport", "weather"
            ]
        );
    }
}
