const SNIPS: [(&str, &str); 7] = [
    ("addtoplaylist", "add to play list"),
    ("bookrestaurant", "book restaurant"),
    ("getweather", "get weather"),
    ("playmusic", "play music"),
    ("ratebook", "rate book"),
    ("searchcreativework", "search creative work"),
    ("searchscreeningevent", "search screening event"),
];

/// Turns a raw intent label into the descriptor shown as an option.
pub fn preprocess_intent_label(raw: &str, dataset: &str) -> String {
    let dataset = dataset.to_lowercase();
    if dataset.contains("snips") {
        let key = raw.to_lowercase();
        if let Some((_, d)) = SNIPS.iter().find(|(k, _)| *k == key) {
            return d.to_string();
        }
    }
    let mut label = raw;
    if dataset.contains("atis") {
        label = label.strip_prefix("atis_").unwrap_or(label);
    }
    let spaced = label.replace('_', " ");
    if !dataset.contains("atis") {
        return spaced;
    }
    let words: Vec<&str> = spaced.split(' ').collect();
    let mut out: Vec<&str> = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        if words[i] == "flight" && words.get(i + 1) == Some(&"no") {
            out.extend(["flight", "number"]);
            i += 2;
        } else {
            out.push(words[i]);
            i += 1;
        }
    }
    out.join(" ")
}
