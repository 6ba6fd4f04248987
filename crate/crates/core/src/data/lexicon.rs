//! Built-in slot inventory and domain archetypes for the synthetic corpus.

use super::generator::{DomainDef, IntentDef, SlotDef};

fn slot(id: &str, description: &str, pos: &str, values: &[&str]) -> SlotDef {
    SlotDef {
        id: id.to_string(),
        description: description.to_string(),
        pos: pos.to_string(),
        values: values.iter().map(|v| v.to_string()).collect(),
        embedded: true,
    }
}

/// Slot whose alphabetic values are deliberately left out of the word-vector fixture.
fn oov_slot(id: &str, description: &str, pos: &str, values: &[&str]) -> SlotDef {
    SlotDef { embedded: false, ..slot(id, description, pos, values) }
}

fn intent(name: &str, templates: &[&str]) -> IntentDef {
    IntentDef { name: name.to_string(), templates: templates.iter().map(|t| t.to_string()).collect() }
}

fn domain(name: &str, intents: Vec<IntentDef>) -> DomainDef {
    DomainDef { name: name.to_string(), intents }
}

pub const SHARED_SLOTS: [&str; 7] = ["date", "time", "location", "rating", "quantity", "price", "contact_name"];

pub fn builtin_slots() -> Vec<SlotDef> {
    vec![
        slot(
            "date",
            "date",
            "NOUN",
            &[
                "today", "tomorrow", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
                "next week", "this weekend", "next friday", "last week", "last night", "march 3", "june 21",
                "july 4", "december 24", "next month", "this sunday",
            ],
        ),
        slot(
            "time",
            "time",
            "NOUN",
            &[
                "7:45", "noon", "9 am", "10:30 pm", "midnight", "6 pm", "8:15 am", "tonight", "this morning",
                "this evening", "5:30", "11 am", "the afternoon", "2 pm", "early morning", "4:20 pm",
            ],
        ),
        slot(
            "location",
            "location city",
            "PROPN",
            &[
                "seattle", "boston", "chicago", "denver", "austin", "portland", "miami", "new york", "san francisco",
                "los angeles", "las vegas", "atlanta", "dallas", "phoenix", "san diego", "livenia street",
                "main street", "downtown",
            ],
        ),
        slot(
            "rating",
            "rating stars",
            "ADJ",
            &[
                "best", "top rated", "5 stars", "4 stars", "three stars", "highly rated", "4.5 stars", "good",
                "five star", "excellent", "well reviewed", "popular",
            ],
        ),
        slot(
            "quantity",
            "quantity number",
            "NUM",
            &["2", "3", "4", "two", "three", "four", "five", "a dozen", "10", "six", "a pair of", "12"],
        ),
        slot(
            "price",
            "price cost",
            "NUM",
            &[
                "$35", "$120", "under $50", "20 dollars", "cheap", "99 dollars", "$15", "less than $200",
                "$1,500", "affordable", "$60", "under 30 dollars", "$2,000", "$75",
            ],
        ),
        slot(
            "contact_name",
            "contact name",
            "PROPN",
            &[
                "alice", "bob", "mom", "dad", "john smith", "maria garcia", "sarah", "david", "my sister",
                "my boss", "kevin", "emma", "li wei", "priya patel",
            ],
        ),
        slot(
            "item",
            "clothing item",
            "NOUN",
            &[
                "hats", "jeans", "sneakers", "dresses", "jackets", "scarves", "boots", "shirts", "sweaters",
                "sandals", "leather jackets", "running shoes", "wool socks", "summer dresses",
            ],
        ),
        slot("color", "color", "ADJ", &["red", "blue", "black", "white", "green", "navy", "beige", "pink", "grey", "dark blue"]),
        oov_slot(
            "brand",
            "brand",
            "PROPN",
            &["zorva", "kelmo", "velisse", "astrana", "morvik", "tellani", "quorra", "bexley", "drumond", "orsaly"],
        ),
        slot(
            "airline",
            "airline",
            "PROPN",
            &["delta", "united", "jetblue", "alaska airlines", "american", "southwest", "lufthansa", "air canada"],
        ),
        oov_slot(
            "flight_number",
            "flight number",
            "NUM",
            &["ua451", "dl2210", "451", "2210", "aa 89", "b6 915", "as 1204", "wn 3321", "lh 490", "ac 8"],
        ),
        slot(
            "category",
            "category",
            "NOUN",
            &[
                "restaurants", "mexican", "italian", "electronics", "spa", "pizza", "sushi", "furniture", "thai food",
                "coffee", "hotels", "car rentals", "gifts", "toys",
            ],
        ),
        slot("store", "store", "PROPN", &["target", "walmart", "costco", "macys", "best buy", "home depot", "kroger", "ikea"]),
        slot(
            "product",
            "product",
            "NOUN",
            &[
                "laptop", "headphones", "outfit", "blender", "phone case", "coffee maker", "tablet", "camera",
                "printer", "vacuum", "monitor", "backpack",
            ],
        ),
        slot(
            "payment_method",
            "payment method",
            "NOUN",
            &["credit card", "paypal", "gift card", "debit card", "cash", "apple pay", "store credit"],
        ),
        slot(
            "property_type",
            "property type",
            "NOUN",
            &["houses", "condos", "apartments", "townhouses", "studios", "lofts", "duplexes", "cottages"],
        ),
        slot("listing_type", "listing type", "OTHER", &["for rent", "for sale", "to rent", "to buy", "for lease"]),
        slot(
            "keyword",
            "keyword occasion",
            "PROPN",
            &["christmas", "birthday", "halloween", "wedding", "graduation", "easter", "anniversary", "thanksgiving"],
        ),
        slot(
            "username",
            "user name",
            "PROPN",
            &["grace", "ethan", "olivia", "noah", "mia", "lucas", "zoe", "oscar", "nina", "leo"],
        ),
        slot("media_type", "media type", "NOUN", &["profile", "photos", "posts", "videos", "status", "stories", "albums"]),
        oov_slot(
            "team_name",
            "team name",
            "PROPN",
            &["spurs", "lakers", "seahawks", "yankees", "celtics", "packers", "dodgers", "sounders", "warriors", "bruins"],
        ),
        slot("sport", "sport", "NOUN", &["basketball", "football", "baseball", "soccer", "hockey", "tennis", "golf"]),
        slot("place_type", "place type", "NOUN", &["work", "home", "school", "the airport", "the gym", "the office", "the mall"]),
        slot("vehicle_type", "vehicle", "NOUN", &["taxi", "bus", "train", "uber", "shuttle", "subway", "ferry", "cab"]),
        slot(
            "accommodation_type",
            "accommodation type",
            "NOUN",
            &["hotels", "motels", "hostels", "resorts", "cabins", "bed and breakfasts", "villas", "inns"],
        ),
        slot(
            "amenities",
            "amenities",
            "NOUN",
            &["free kennel services", "free wifi", "a pool", "free parking", "breakfast", "a gym", "room service", "a hot tub"],
        ),
    ]
}

pub fn builtin_domains() -> Vec<DomainDef> {
    vec![
        domain(
            "fashion",
            vec![
                intent(
                    "find_outfit",
                    &[
                        "show me {item} in {color}",
                        "show me outfits with {item}",
                        "find {color} {item} under {price}",
                        "are there {brand} {item} in {location}",
                        "find {rating} {item} for {price}",
                        "i want {color} {item} from {brand}",
                        "look for {item} on sale in {location} {date}",
                    ],
                ),
                intent(
                    "buy_outfit",
                    &[
                        "buy {quantity} {color} {item}",
                        "order {quantity} {item} from {brand} for {price}",
                        "get me {rating} {item} in {color}",
                        "purchase {item} by {brand} under {price}",
                    ],
                ),
            ],
        ),
        domain(
            "flight_status",
            vec![
                intent(
                    "check_status",
                    &[
                        "status of the flight from {location} that departed {date}",
                        "is {airline} flight {flight_number} on time",
                        "when does flight {flight_number} land in {location}",
                        "did the {airline} flight to {location} leave at {time}",
                        "what time does flight {flight_number} depart {date}",
                        "check {airline} flights to {location} on {date}",
                    ],
                ),
                intent(
                    "share_status",
                    &[
                        "tell {contact_name} my flight lands at {time}",
                        "text {contact_name} that flight {flight_number} is late",
                        "let {contact_name} know the {airline} flight arrives {date} at {time}",
                    ],
                ),
            ],
        ),
        domain(
            "deals",
            vec![
                intent(
                    "find_deals",
                    &[
                        "find the {rating} deals for {category}",
                        "find {category} deals in {location}",
                        "any deals on {category} under {price}",
                        "what are {rating} {category} deals near {location}",
                        "show me {category} discounts for {date}",
                    ],
                ),
                intent(
                    "store_deals",
                    &[
                        "show {category} coupons at {store} for {date}",
                        "deals at {store} in {location} {date}",
                        "is {store} having a sale on {category}",
                        "{rating} offers at {store} under {price}",
                    ],
                ),
            ],
        ),
        domain(
            "purchase",
            vec![
                intent(
                    "return_item",
                    &[
                        "return the {product} i purchased {date}",
                        "i want a refund for the {product} i bought {date}",
                        "return {quantity} {product} paid with {payment_method}",
                    ],
                ),
                intent(
                    "buy_item",
                    &[
                        "buy {quantity} {product} with {payment_method}",
                        "order a {product} for {price}",
                        "send the {product} to {contact_name}",
                        "pay for the {product} using {payment_method}",
                        "order {quantity} {product} for {contact_name} under {price}",
                    ],
                ),
                intent("track_order", &["track the {product} i ordered {date}", "where is the {product} for {contact_name}"]),
            ],
        ),
        domain(
            "real_estate",
            vec![
                intent(
                    "find_listing",
                    &[
                        "show {property_type} {listing_type} on {location}",
                        "find {property_type} in {location} under {price}",
                        "list {quantity} bedroom {property_type} {listing_type}",
                        "any {property_type} {listing_type} in {location} for {price}",
                        "search {rating} {property_type} near {location}",
                    ],
                ),
                intent(
                    "schedule_tour",
                    &[
                        "schedule a tour of the {property_type} on {date} at {time}",
                        "book a viewing in {location} {date}",
                        "can i see the {property_type} {listing_type} {date} at {time}",
                    ],
                ),
            ],
        ),
        domain(
            "shopping",
            vec![
                intent(
                    "browse",
                    &[
                        "{category} for {keyword}",
                        "find {category} for {keyword} under {price}",
                        "shop {rating} {category} in {location}",
                        "i need {category} for a {keyword} on {date}",
                    ],
                ),
                intent(
                    "cart",
                    &[
                        "add {quantity} {category} to my cart",
                        "put {quantity} {rating} {category} in the cart for {price}",
                        "remove the {category} for {keyword} from my cart",
                    ],
                ),
            ],
        ),
        domain(
            "social_network",
            vec![
                intent(
                    "view",
                    &[
                        "show {username} 's {media_type}",
                        "what did {username} post {date}",
                        "open {username} 's {media_type} from {location}",
                    ],
                ),
                intent(
                    "share",
                    &[
                        "post my {media_type} from {location}",
                        "share {username} 's {media_type} with {contact_name}",
                        "send a message to {contact_name} at {time}",
                        "remind me to call {contact_name} {date} at {time}",
                    ],
                ),
            ],
        ),
        domain(
            "sports",
            vec![
                intent(
                    "schedule",
                    &[
                        "find {team_name} game schedule",
                        "when do the {team_name} play {date}",
                        "{sport} games in {location} {date}",
                        "who won the {team_name} game {date}",
                        "is the {team_name} game at {time}",
                    ],
                ),
                intent(
                    "tickets",
                    &[
                        "buy {quantity} tickets for the {team_name} game",
                        "tickets for {sport} under {price} at {time}",
                        "get {quantity} seats for {sport} in {location} for {price}",
                    ],
                ),
            ],
        ),
        domain(
            "transportation",
            vec![
                intent(
                    "traffic",
                    &[
                        "what is the traffic like to {place_type}",
                        "how long to get to {place_type} by {vehicle_type}",
                        "how is traffic to {location} at {time}",
                    ],
                ),
                intent(
                    "ride",
                    &[
                        "get me a {vehicle_type} to {location} at {time}",
                        "book a {vehicle_type} for {quantity} people",
                        "next {vehicle_type} to {location}",
                        "ride to {place_type} under {price} {date}",
                        "call a {vehicle_type} to {place_type} {date} at {time}",
                    ],
                ),
            ],
        ),
        domain(
            "travel",
            vec![
                intent(
                    "search",
                    &[
                        "i need a list of {accommodation_type} that have {amenities}",
                        "find {rating} {accommodation_type} in {location}",
                        "{accommodation_type} with {amenities} under {price}",
                        "show {accommodation_type} near {location} with {amenities}",
                    ],
                ),
                intent(
                    "book",
                    &[
                        "book {accommodation_type} in {location} from {date}",
                        "reserve {quantity} rooms at a {rating} {accommodation_type}",
                        "book a room in {location} for {price} {date}",
                    ],
                ),
            ],
        ),
    ]
}

/// Coarse POS for template words; anything unlisted is a noun.
pub fn template_pos(word: &str) -> &'static str {
    const VERBS: &[&str] = &[
        "show", "find", "are", "want", "look", "buy", "order", "get", "purchase", "is", "does", "land", "did",
        "leave", "depart", "check", "tell", "lands", "text", "let", "know", "arrives", "having", "return",
        "purchased", "bought", "paid", "send", "pay", "using", "track", "ordered", "list", "search", "schedule",
        "book", "can", "see", "need", "shop", "add", "put", "remove", "post", "open", "share", "remind", "call",
        "play", "won", "do", "go", "have", "reserve", "like",
    ];
    const ADJ: &[&str] = &["late", "any", "next", "my", "long"];
    const ADV: &[&str] = &["when", "where", "how", "what", "who"];
    const OTHER: &[&str] = &[
        "me", "in", "with", "under", "for", "from", "the", "on", "i", "a", "to", "at", "that", "of", "by", "near",
        "'s", "and", "there", "it", "by", "an",
    ];
    if VERBS.contains(&word) {
        "VERB"
    } else if ADJ.contains(&word) {
        "ADJ"
    } else if ADV.contains(&word) {
        "ADV"
    } else if OTHER.contains(&word) {
        "OTHER"
    } else {
        "NOUN"
    }
}
