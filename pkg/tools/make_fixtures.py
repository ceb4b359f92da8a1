"""Regenerate the bundled demo corpus under src/hysem/data/corpus.

Run from the repository root: ``python3 tools/make_fixtures.py``. Output is
deterministic, so rerunning leaves the tree unchanged.
"""

from __future__ import annotations

import base64
import shutil
from pathlib import Path

from hysem.fetcher import UNPAYWALL_URL, url_key
from hysem.jsonio import write_json, write_jsonl
from hysem.pipeline import layout_key

OUT = Path(__file__).resolve().parents[1] / "src" / "hysem" / "data" / "corpus"

OZONE_BODY = (
    "We linked daily ground-level ozone concentrations from regulatory monitors to hospital admissions "
    "for {outcome} across {region}. Exposure windows covered lag zero to lag five days and models adjusted "
    "for temperature, humidity, season and day of week. {method_sentence} Ozone exposure above the seasonal "
    "median was associated with elevated risk of {outcome}, and the association was strongest among older "
    "adults with prior cardiovascular disease. Sensitivity analyses that added fine particulate matter and "
    "nitrogen dioxide as co-pollutants left the ozone estimates largely unchanged. {design_sentence}"
)
WASTEWATER_BODY = (
    "Composite wastewater samples were collected twice weekly from {region} treatment plants and analysed "
    "for viral RNA using quantitative PCR and amplicon sequencing. Normalised viral loads tracked clinical "
    "case counts with a lead of several days. {method_sentence} Sequencing of wastewater extracts detected "
    "emerging variants before they appeared in clinical surveillance, supporting wastewater surveillance as "
    "an early warning signal for public health agencies. {design_sentence}"
)

ARTICLES = [
    dict(doi="10.1000/oz.2021.001", title="Ozone exposure and myocardial infarction admissions: a random forest analysis",
         authors="Alvarez, M.; Brooks, T.", date="2021-03-14", journal="Environmental Health", body=OZONE_BODY,
         outcome="myocardial infarction", region="twelve metropolitan counties",
         method_sentence="A random forest model ranked exposure lags and a gradient boosting model estimated nonlinear exposure-response curves.",
         design_sentence="This cohort study followed admissions over eight years."),
    dict(doi="10.1000/oz.2020.014", title="Short-term ozone and heart failure: time-series evidence with XGBoost",
         authors="Chen, L.; Dube, R.", date="2020-07-02", journal="Atmospheric Environment", body=OZONE_BODY,
         outcome="heart failure", region="the coastal basin",
         method_sentence="XGBoost was used to capture interactions between ozone and temperature.",
         design_sentence="The time-series study design controlled for long-term trends."),
    dict(doi="10.1000/oz.2022.031", title="Machine learning for air pollution and cardiovascular outcomes: a systematic review",
         authors="Eriksen, A.", date="2022-01-20", journal="Reviews on Environmental Health", body=OZONE_BODY,
         outcome="myocardial infarction", region="published cohorts",
         method_sentence="Most included studies used a random forest or a neural network to model exposure.",
         design_sentence="This systematic review screened studies from five databases."),
    dict(doi="10.1000/oz.2021.044", title="Comment on ozone and acute heart attack risk estimated with neural networks",
         authors="Fischer, K.", date="2021-11-09", journal="Epidemiology", body=OZONE_BODY,
         outcome="myocardial infarction", region="the northern valley",
         method_sentence="The original authors trained a neural network on daily monitor data.",
         design_sentence="The underlying case-crossover study compared hazard and control days."),
    dict(doi="10.1000/pm.2019.007", title="Fine particulate matter and heart failure hospitalisation in older adults",
         authors="Gomez, P.; Hale, S.", date="2019-05-30", journal="Circulation Research", body=OZONE_BODY.replace("ground-level ozone", "fine particulate matter").replace("Ozone exposure", "Particulate exposure").replace("left the ozone estimates", "left the estimates"),
         outcome="heart failure", region="four river districts",
         method_sentence="A random forest model selected confounders.",
         design_sentence="This cohort study used linked Medicare records."),
    dict(doi="10.1000/ww.2022.101", title="Wastewater surveillance of SARS-CoV-2 variants by amplicon sequencing",
         authors="Ibrahim, N.; Jones, O.", date="2022-02-11", journal="Water Research", body=WASTEWATER_BODY,
         region="six municipal", method_sentence="A gradient boosting model forecast clinical cases from viral loads.",
         design_sentence="This cohort study spanned two epidemic waves."),
    dict(doi="10.1000/ww.2021.087", title="Early warning from sewage: viral RNA trends precede clinical cases",
         authors="Kim, H.", date="2021-09-18", journal="Environmental Science and Technology", body=WASTEWATER_BODY,
         region="three rural", method_sentence="Trends were summarised with smoothing splines.",
         design_sentence="The time-series study covered fifty weeks."),
    dict(doi="10.1000/ww.2023.002", title="Normalising wastewater viral loads with faecal markers",
         authors="Lopez, D.; Moore, E.", date="2023-04-04", journal="Water Research", body=WASTEWATER_BODY,
         region="two urban", method_sentence="A neural network corrected for dilution from rainfall.",
         design_sentence="This methodological paper compares normalisation strategies."),
    dict(doi="10.1000/ww.2020.055", title="Sampling frequency requirements for sewage-based epidemiology",
         authors="Nakamura, Y.", date="2020-10-27", journal="Water Research", body=WASTEWATER_BODY,
         region="eight coastal", method_sentence="Bootstrap resampling quantified detection power.",
         design_sentence="The simulation study varied sampling schedules."),
    dict(doi="10.1000/oz.2018.090", title="Ozone, temperature and cardiac arrest: a case-crossover analysis",
         authors="Owens, J.", date="2018-06-15", journal="Resuscitation", body=OZONE_BODY,
         outcome="cardiac arrest", region="the inland plateau", method_sentence="Conditional logistic regression was used.",
         design_sentence="This case-crossover study matched control days within month."),
]


def record(i: int, a: dict) -> dict:
    first_author = a["authors"].split(",")[0]
    year = a["date"][:4]
    return {
        "doi": a["doi"],
        "title": a["title"],
        "authors": a["authors"],
        "date": a["date"],
        "journal": a["journal"],
        "volume": str(10 + i),
        "issue": str(1 + i % 4),
        "pages": f"{100 + 10 * i}-{109 + 10 * i}",
        "abstract": "",
        "item_type": "N/A",
        "citation_count": None,
        "zotero_key": f"ZK{i:06d}",
        "in_text_citation": f"({first_author}, {year})",
        "full_citation": f"{a['authors']} ({year}). {a['title']}. {a['journal']}, {10 + i}({1 + i % 4}), {100 + 10 * i}-{109 + 10 * i}.",
    }


def cell(l, t, r, b, text):
    return {"bbox": {"l": l, "t": t, "r": r, "b": b}, "text": text}


def page_for(i: int, a: dict) -> dict:
    body = a["body"].format(**{k: a.get(k, "") for k in ("outcome", "region", "method_sentence", "design_sentence")})
    sentences = [s.strip() + "." for s in body.split(". ") if s.strip()]
    half = len(sentences) // 2
    para1, para2 = " ".join(sentences[:half]).rstrip("."), " ".join(sentences[half:]).rstrip(".")
    clusters = [
        {"id": 0, "label": "PAGE_HEADER", "confidence": 0.9, "bbox": {"l": 72, "t": 20, "r": 540, "b": 34},
         "cells": [cell(72, 20, 540, 34, f"{a['journal']} {a['date'][:4]}")]},
        {"id": 1, "label": "TITLE", "confidence": 0.95, "bbox": {"l": 72, "t": 50, "r": 540, "b": 80},
         "cells": [cell(72, 50, 540, 80, a["title"])]},
        {"id": 2, "label": "TEXT", "confidence": 0.93, "bbox": {"l": 20, "t": 100, "r": 540, "b": 300},
         "cells": [cell(20, 100, 38, 112, "1"), cell(72, 100, 540, 300, para1 + ".")]},
        # Two detector fragments of one numbered equation, 2 px apart.
        {"id": 3, "label": "FORMULA", "confidence": 0.8, "bbox": {"l": 150, "t": 320, "r": 460, "b": 340},
         "cells": [cell(150, 320, 460, 340, "log RR = beta * O3_lag")]},
        {"id": 4, "label": "FORMULA", "confidence": 0.8, "bbox": {"l": 150, "t": 342, "r": 462, "b": 362},
         "cells": [cell(150, 342, 462, 362, "+ f(temperature) (1)")]},
        {"id": 5, "label": "TEXT", "confidence": 0.92, "bbox": {"l": 72, "t": 380, "r": 540, "b": 560},
         "cells": [cell(72, 380, 540, 560, para2 + ".")]},
        {"id": 6, "label": "TABLE", "confidence": 0.88, "bbox": {"l": 72, "t": 580, "r": 540, "b": 700},
         "cells": [cell(72, 580, 300, 600, "Lag"), cell(300, 580, 540, 600, "Relative risk"),
                   cell(72, 600, 300, 620, "0"), cell(300, 600, 540, 620, f"1.0{i}")]},
        {"id": 7, "label": "PAGE_FOOTER", "confidence": 0.9, "bbox": {"l": 280, "t": 760, "r": 330, "b": 774},
         "cells": [cell(280, 760, 330, 774, "1")]},
    ]
    pages = [{"page": {"width": 612, "height": 792, "image_scale": 2.0}, "clusters": clusters}]
    if i == 0:
        # A page-sized "table" holding only a few cells: reclassified to text.
        pages.append({"page": {"width": 612, "height": 792, "image_scale": 2.0}, "clusters": [
            {"id": 0, "label": "TABLE", "confidence": 0.6, "bbox": {"l": 10, "t": 10, "r": 600, "b": 780},
             "cells": [cell(72, 100, 540, 140, "Supplementary note: random forest hyperparameters were tuned by cross-validation.")]},
        ]})
    return {"pages": pages}


def main() -> None:
    if OUT.exists():
        shutil.rmtree(OUT)
    records = [record(i, a) for i, a in enumerate(ARTICLES)]

    # The last article has no DOI in either export, so only title
    # deduplication can collapse it.
    records[9]["doi"] = ""
    # Two overlapping source exports: same DOI in different case, and the
    # DOI-less article under a differently cased title.
    pubmed = [*records[:6], records[9]]
    openalex = [dict(records[4], doi=records[4]["doi"].upper()), dict(records[5]), *records[6:9],
                dict(records[9], title=records[9]["title"].upper())]
    write_jsonl(OUT / "pubmed.jsonl", pubmed)
    write_jsonl(OUT / "openalex.jsonl", openalex)

    enrichment = []
    for i, a in enumerate(ARTICLES):
        enrichment.append({
            "doi": a["doi"],
            "abstract": a["title"] + ".",
            "item_type": "journal-article",
            "citation_count": [12, 30, 55, 2, 8, 21, 17, 4, 9, 15][i],
            "is_published": True,
            "is_retracted": False,
            "open_alex_id": f"W{4000000 + i}",
        })
    write_jsonl(OUT / "enrichment.jsonl", enrichment)

    transport = OUT / "transport"
    transport.mkdir(parents=True)
    for i, a in enumerate(ARTICLES):
        api = UNPAYWALL_URL.format(doi=a["doi"])
        if i == 9:
            continue  # no DOI, never looked up
        if i == 8:
            continue  # metadata lookup fails
        if i == 7:
            write_json(transport / f"{url_key(api)}.json", {"url": api, "json": {"doi": a["doi"], "oa_locations": []}})
            continue
        pdf = f"https://oa.example.org/{a['doi']}.pdf"
        write_json(transport / f"{url_key(api)}.json", {"url": api, "json": {
            "doi": a["doi"], "best_oa_location": {"url_for_pdf": pdf}, "oa_locations": [{"url_for_pdf": pdf}]}})
        data = f"%PDF-1.4 demo {a['doi']}\n".encode()
        write_json(transport / f"{url_key(pdf)}.json", {"url": pdf, "bytes_b64": base64.b64encode(data).decode()})

    for i, a in enumerate(ARTICLES[:7]):
        write_json(OUT / "pages" / f"{layout_key(a['doi'])}.json", page_for(i, a))

    write_json(OUT / "fields.json", {"fields": [
        {"name": "Study Type", "explanation": "Study design", "kind": "text"},
        {"name": "ML Methods", "explanation": "Machine learning methods used", "kind": "list"},
        {"name": "Pollutants", "explanation": "Air pollutants or sampled matrices", "kind": "list"},
        {"name": "Health Outcomes", "explanation": "Cardiovascular outcomes studied", "kind": "list"},
    ]})
    write_json(OUT / "extractor.json", {"rules": [
        {"contains": "cohort study", "output": {"Study Type": "cohort study"}},
        {"contains": "time-series study", "output": {"Study Type": "time-series study"}},
        {"contains": "systematic review", "output": {"Study Type": "systematic review"}},
        {"contains": "case-crossover study", "output": {"Study Type": "case-crossover study"}},
        {"contains": "methodological paper", "output": {"Study Type": "methodological paper"}},
        {"contains": "random forest", "output": {"ML Methods": ["random forest"]}},
        {"contains": "gradient boosting", "output": {"ML Methods": ["gradient boosting"]}},
        {"contains": "xgboost", "output": {"ML Methods": ["XGBoost"]}},
        {"contains": "neural network", "output": {"ML Methods": ["neural network"]}},
        {"contains": "ground-level ozone", "output": {"Pollutants": ["ground-level ozone"]}},
        {"contains": "fine particulate matter", "output": {"Pollutants": ["fine particulate matter"]}},
        {"contains": "myocardial infarction", "output": {"Health Outcomes": ["myocardial infarction"]}},
        {"contains": "heart failure", "output": {"Health Outcomes": ["heart failure"]}},
        {"contains": "cardiac arrest", "output": {"Health Outcomes": ["cardiac arrest"]}},
    ]})
    write_json(OUT / "dicts.json", {
        "ML_METHODS": {
            "Random Forest": ["random forest", "random forests", "RF"],
            "Gradient Boosting": ["gradient boosting", "XGBoost", "boosted trees"],
            "Neural Network": ["neural network", "neural networks", "deep learning"],
        },
        "POLLUTANTS": {
            "Ozone": ["ozone", "O3", "ground-level ozone"],
            "PM2.5": ["PM2.5", "fine particulate matter"],
        },
        "HEART_DISEASE": {
            "Myocardial Infarction": ["myocardial infarction", "heart attack"],
            "Heart Failure": ["heart failure", "cardiac failure"],
            "Cardiac Arrest": ["cardiac arrest"],
        },
        "STUDY_TYPES": {
            "Cohort Study": ["cohort study", "cohort"],
            "Time-Series Study": ["time-series study", "time series"],
            "Systematic Review": ["systematic review"],
            "Case-Crossover Study": ["case-crossover study"],
            "Methodological Paper": ["methodological paper"],
        },
    })
    write_json(OUT / "kg.json", {"field_mappings": {
        "Study Type": {"label": "StudyType", "relationship": "STUDY_TYPE", "dictionary": "STUDY_TYPES"},
        "ML Methods": {"label": "MLMethod", "relationship": "USES_ML_METHOD", "dictionary": "ML_METHODS"},
        "Pollutants": {"label": "PollutantTerm", "relationship": "RELATED_TO_POLLUTANT", "dictionary": "POLLUTANTS"},
        "Health Outcomes": {"label": "HeartDisease", "relationship": "ASSOCIATED_WITH_HEART_DISEASE", "dictionary": "HEART_DISEASE"},
    }})
    write_json(OUT / "grid.json", {
        "num_topics": [2, 3], "iterations": 60, "seed": 7, "eta": 0.01,
        "top_n": 5, "bigram_threshold": 10.0, "trigram_threshold": 10.0, "no_below": 1, "no_above": 1.0,
    })

    # Fetched articles are indexed in DOI order.
    fetched = sorted(ARTICLES[:7], key=lambda a: a["doi"])
    doc_of = {a["doi"]: i for i, a in enumerate(fetched)}
    r0 = records[0]
    citation = {"DOI": r0["doi"], "ZoteroKey": r0["zotero_key"],
                "InTextCitation": r0["in_text_citation"], "FullCitation": r0["full_citation"]}
    structured_evidence = (
        f"Title: {r0['title']}\nStudy Type: cohort study\n"
        "ML Methods: random forest, gradient boosting\nPollutants: ground-level ozone\n"
        "Health Outcomes: myocardial infarction"
    )
    d0 = str(doc_of[r0["doi"]])
    mixed = {"SourceKind": "PDF", "PDF_DocIndex": d0, "PDF_ChunkIndex": "0", "Struct_DocIndex": d0,
             "Struct_ChunkIndex": "0", "EvidenceText": "ozone raised infarction risk", **citation}
    good = {"SourceKind": "Structured", "Struct_DocIndex": d0, "Struct_ChunkIndex": "0",
            "EvidenceText": structured_evidence, **citation}
    write_json(OUT / "agents.json", {
        "reformulation": {"query": "random forest ozone myocardial infarction cohort study",
                          "keywords": ["random forest", "ozone", "myocardial infarction"]},
        "answers": [
            {"text": "Ozone raises infarction risk.", "observations": [mixed]},
            {"text": "Ozone raises infarction risk.", "observations": [dict(good, EvidenceText="ozone is bad")]},
            {"text": "A random forest cohort study linked ground-level ozone to myocardial infarction admissions.",
             "observations": [good]},
        ],
        "verdicts": [
            {"pass": False, "feedback": "schema"},
            {"pass": False, "feedback": "evidence text does not support the claim"},
            {"pass": True, "feedback": ""},
        ],
    })
    write_json(OUT / "agents_unvalidated.json", {
        "reformulation": {"query": "wastewater sequencing variants early warning",
                          "keywords": ["wastewater", "sequencing", "variants"]},
        "answers": [{"text": "Wastewater sequencing detects variants early.", "observations": [
            {"SourceKind": "PDF", "PDF_DocIndex": str(doc_of[records[5]["doi"]]), "PDF_ChunkIndex": "0",
             "EvidenceText": "Sequencing of wastewater extracts detected emerging variants before they appeared in clinical surveillance",
             "DOI": records[5]["doi"], "ZoteroKey": records[5]["zotero_key"],
             "InTextCitation": records[5]["in_text_citation"], "FullCitation": records[5]["full_citation"]}]}],
        "verdicts": [{"pass": False, "feedback": "answer lacks quantitative detail"}],
    })

    write_json(OUT / "config.json", {
        "kb_prefix": "demo",
        "workdir": "work",
        "records": {"sources": ["pubmed.jsonl", "openalex.jsonl"], "enrichment": "enrichment.jsonl"},
        "fetch": {"fixtures": "transport", "qps": 8, "concurrency": 4, "clock": "simulated"},
        "layout": {"pages": "pages", "config": {}},
        "extraction": {"fields": "fields.json", "extractor": "extractor.json", "max_tokens": 8000, "overlap": 500},
        "topics": {"grid": "grid.json", "workers": 1},
        "unify": {"provider": "test", "dimension": 64, "threshold": 0.55, "dictionaries": "dicts.json"},
        "graph": {"mappings": "kg.json"},
        "index": {"max_tokens": 7000, "overlap": 200},
        "ask": {"K": 60, "top_k": 20, "max_iterations": 3, "queries": [
            {"query": "Which machine learning methods link ozone to heart attacks?", "agents": "agents.json"},
            {"query": "Can wastewater sequencing detect variants early?", "agents": "agents_unvalidated.json"},
        ]},
    })


if __name__ == "__main__":
    main()
