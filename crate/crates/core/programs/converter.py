class Converter():
  def __init__(self, exchange_rates):
    self.exchange_rates = exchange_rates

  def convert(self, from_currency, to_currency, amount):
    amount_in_usd = amount / self.exchange_rates[from_currency]
    return amount_in_usd  * self.exchange_rates[to_currency]
    
converter = Converter({"USD": 1, "EUR": 0.9, "GBP": 0.75})
print(converter.convert("EUR", "GBP", 100))
